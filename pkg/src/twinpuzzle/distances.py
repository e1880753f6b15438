"""Embedding distance measures: 1-cosine and the L1/L2/L3 norms.

Every measure maps a pair of d-vectors to a non-negative dissimilarity
(1-cosine has range [0, 2]). Batched variants operate row-wise; the pairwise
variant produces the full cross matrix used by the all-pairs pipeline.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

MEASURES = ("cosine", "l1", "l2", "l3")


def _check(name: str):
    if name not in MEASURES:
        raise ValueError(f"unknown distance measure {name!r} (choose from {MEASURES})")


def distance(z_l: np.ndarray, z_r: np.ndarray, measure: str) -> float:
    """Dissimilarity of two equal-length vectors under the chosen measure."""
    _check(measure)
    a = np.asarray(z_l, dtype=np.float64).ravel()
    b = np.asarray(z_r, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    if measure == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise ValueError("cosine distance is undefined for zero vectors")
        return float(1.0 - (a @ b) / (na * nb))
    p = {"l1": 1, "l2": 2, "l3": 3}[measure]
    return float(np.sum(np.abs(a - b) ** p) ** (1.0 / p))


def pairwise(left: np.ndarray, right: np.ndarray, measure: str) -> np.ndarray:
    """All distances between rows of left (m, d) and rows of right (n, d)."""
    _check(measure)
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if measure == "cosine":
        norms_l = np.linalg.norm(left, axis=1)
        norms_r = np.linalg.norm(right, axis=1)
        if np.any(norms_l == 0.0) or np.any(norms_r == 0.0):
            raise ValueError("cosine distance is undefined for zero vectors")
        return cdist(left, right, "cosine")
    if measure == "l1":
        return cdist(left, right, "cityblock")
    if measure == "l2":
        return cdist(left, right, "euclidean")
    return cdist(left, right, "minkowski", p=3)


def rowwise_with_grad(z_a: np.ndarray, z_b: np.ndarray, measure: str
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise distances of (B, d) batches plus gradients w.r.t. both inputs.

    Returns (dist (B,), d_dist/d_z_a (B, d), d_dist/d_z_b (B, d)). Subgradient 0
    is used wherever the measure is not differentiable (ties at zero).
    """
    _check(measure)
    za = np.asarray(z_a, dtype=np.float32)
    zb = np.asarray(z_b, dtype=np.float32)
    diff = za - zb
    if measure == "l2":
        d = np.sqrt(np.sum(diff * diff, axis=1))
        safe = np.where(d > 0.0, d, 1.0)[:, None]
        ga = np.where(d[:, None] > 0.0, diff / safe, 0.0)
        return d, ga, -ga
    if measure == "l1":
        d = np.sum(np.abs(diff), axis=1)
        ga = np.sign(diff)
        return d, ga, -ga
    if measure == "l3":
        s = np.sum(np.abs(diff) ** 3, axis=1)
        d = s ** (1.0 / 3.0)
        safe = np.where(d > 0.0, d, 1.0)
        ga = (diff * np.abs(diff)) / (safe * safe)[:, None]
        ga = np.where(d[:, None] > 0.0, ga, 0.0)
        return d.astype(np.float32), ga.astype(np.float32), (-ga).astype(np.float32)
    # cosine
    na = np.linalg.norm(za, axis=1)
    nb = np.linalg.norm(zb, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cosine distance is undefined for zero vectors")
    dot = np.sum(za * zb, axis=1)
    cos = dot / (na * nb)
    d = 1.0 - cos
    ga = -(zb / (na * nb)[:, None] - za * (cos / (na * na))[:, None])
    gb = -(za / (na * nb)[:, None] - zb * (cos / (nb * nb))[:, None])
    return d.astype(np.float32), ga.astype(np.float32), gb.astype(np.float32)
