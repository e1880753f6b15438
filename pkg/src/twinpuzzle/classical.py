"""Classical pairwise compatibility measures: SSD, L1, PBC and MGC.

All four score an ordered junction: anchor piece with edge a rotated to face
RIGHT against a candidate with edge b rotated to face LEFT, using the one or
two pixel columns on either side of the junction. SSD, L1 and PBC expect LAB
pieces; MGC works on RGB scaled to 0..255 so its dummy gradients (+-1 per
channel) keep their classical magnitude. Eroded puzzles should provide
cropped pieces, so the compared columns are true piece boundaries.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .cm import CMMatrix, RAW, _sentinel_mask
from .color import rgb_to_lab
from .puzzle import LEFT, RIGHT, Piece, Puzzle, rotate_pixels, rotations_to_face

CLASSICAL_METHODS = ("ssd", "l1", "pbc", "mgc")

PBC_P = 3.0 / 10.0
PBC_Q = 1.0 / 16.0
MGC_EPS = 1e-6
MGC_SCALE = 255.0


def _boundary(pixels: np.ndarray, edge: int, side: int) -> tuple[np.ndarray, np.ndarray]:
    """(outer, inner) boundary columns of `edge` once rotated to face `side`."""
    view = rotate_pixels(pixels, rotations_to_face(edge, side))
    if side == RIGHT:
        return view[:, -1], view[:, -2]
    return view[:, 0], view[:, 1]


def ssd_cm(p_i: np.ndarray, p_j: np.ndarray) -> float:
    """Sum of squared differences of the two abutting columns."""
    a, _ = _boundary(p_i, RIGHT, RIGHT)
    b, _ = _boundary(p_j, LEFT, LEFT)
    return float(np.sum((a - b) ** 2))


def l1_cm(p_i: np.ndarray, p_j: np.ndarray) -> float:
    """Sum of absolute differences of the two abutting columns."""
    a, _ = _boundary(p_i, RIGHT, RIGHT)
    b, _ = _boundary(p_j, LEFT, LEFT)
    return float(np.sum(np.abs(a - b)))


def _pbc_one_way(outer: np.ndarray, inner: np.ndarray, mate_outer: np.ndarray,
                 p: float, q: float) -> float:
    predicted = 2.0 * outer - inner
    return float(np.sum(np.abs(predicted - mate_outer) ** p) ** (q / p))


def pbc_cm(p_i: np.ndarray, p_j: np.ndarray, p: float = PBC_P, q: float = PBC_Q) -> float:
    """Prediction-based (L_p)^q dissimilarity, summed over both directions.

    Each side linearly extrapolates its boundary column across the junction;
    the penalty is (sum |predicted - actual|^p)^(q/p).
    """
    a_out, a_in = _boundary(p_i, RIGHT, RIGHT)
    b_out, b_in = _boundary(p_j, LEFT, LEFT)
    return (_pbc_one_way(a_out, a_in, b_out, p, q)
            + _pbc_one_way(b_out, b_in, a_out, p, q))


def _mgc_stats(outer: np.ndarray, inner: np.ndarray, dummies: bool,
               eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean outward gradient and inverse regularized channel covariance."""
    grads = (outer - inner).astype(np.float64)
    mu = grads.mean(axis=0)
    dev = grads - mu
    if dummies:
        # classical stabilizers: zero and +-1 per channel, deviations taken from mu
        extra = np.concatenate([np.zeros((1, 3)), np.eye(3), -np.eye(3)]) - mu
        dev = np.concatenate([dev, extra])
    cov = dev.T @ dev / dev.shape[0]
    return mu, np.linalg.inv(cov + eps * np.eye(3))


def mgc_cm(p_i: np.ndarray, p_j: np.ndarray, dummies: bool = True,
           eps: float = MGC_EPS, scale: float = MGC_SCALE) -> float:
    """Mahalanobis gradient compatibility, symmetric over both directions.

    Each side models its outward boundary gradients with a channel mean and
    covariance; the cross-junction gradients are scored under that model.
    `dummies=False` drops the stabilizer samples, leaving cov + eps*I alone.
    """
    ai_out, ai_in = _boundary(p_i * scale, RIGHT, RIGHT)
    bj_out, bj_in = _boundary(p_j * scale, LEFT, LEFT)
    cross = (bj_out - ai_out).astype(np.float64)  # rightward step over the junction

    mu_i, prec_i = _mgc_stats(ai_out, ai_in, dummies, eps)
    dev = cross - mu_i
    d_lr = float(np.einsum("pi,ij,pj->", dev, prec_i, dev))

    mu_j, prec_j = _mgc_stats(bj_out, bj_in, dummies, eps)
    dev = -cross - mu_j  # leftward step, seen from the candidate side
    d_rl = float(np.einsum("pi,ij,pj->", dev, prec_j, dev))
    return d_lr + d_rl


_SCALARS = {"ssd": ssd_cm, "l1": l1_cm, "pbc": pbc_cm, "mgc": mgc_cm}


def junction_score(method: str, anchor: Piece | np.ndarray, a: int,
                   cand: Piece | np.ndarray, b: int) -> float:
    """Score junction (anchor, a, cand, b) with a classical measure.

    Pixels must already be in the method's color space (LAB for ssd/l1/pbc,
    [0,1] RGB for mgc).
    """
    px_i = anchor.pixels if isinstance(anchor, Piece) else anchor
    px_j = cand.pixels if isinstance(cand, Piece) else cand
    view_i = rotate_pixels(px_i, rotations_to_face(a, RIGHT))
    view_j = rotate_pixels(px_j, rotations_to_face(b, LEFT))
    return _SCALARS[method](view_i, view_j)


# ---------------------------------------------------------------------------
# Vectorized all-pairs
# ---------------------------------------------------------------------------

def _edge_features(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Outer/inner boundary columns for every (piece, edge) on both sides.

    Returns (anchor_outer, anchor_inner, cand_outer, cand_inner), each
    (4N, P, C); row 4*k+e corresponds to edge e of piece k.
    """
    n, p, _, c = stack.shape
    a_out = np.empty((n, 4, p, c), dtype=np.float64)
    a_in = np.empty_like(a_out)
    c_out = np.empty_like(a_out)
    c_in = np.empty_like(a_out)
    for edge in range(4):
        right_view = np.rot90(stack, rotations_to_face(edge, RIGHT), axes=(1, 2))
        left_view = np.rot90(stack, rotations_to_face(edge, LEFT), axes=(1, 2))
        a_out[:, edge] = right_view[:, :, -1]
        a_in[:, edge] = right_view[:, :, -2]
        c_out[:, edge] = left_view[:, :, 0]
        c_in[:, edge] = left_view[:, :, 1]
    flat = (n * 4, p * c)
    return (a_out.reshape(flat), a_in.reshape(flat),
            c_out.reshape(flat), c_in.reshape(flat))


def _pbc_pairs(pred: np.ndarray, actual: np.ndarray, p: float, q: float,
               chunk: int = 128) -> np.ndarray:
    out = np.empty((pred.shape[0], actual.shape[0]))
    for s in range(0, pred.shape[0], chunk):
        e = min(s + chunk, pred.shape[0])
        diff = np.abs(pred[s:e, None, :] - actual[None, :, :])
        out[s:e] = np.sum(diff ** p, axis=2) ** (q / p)
    return out


def _mgc_pairs(a_out, a_in, c_out, c_in, dummies: bool, eps: float) -> np.ndarray:
    """Sum of left-to-right and right-to-left Mahalanobis scores for all pairs."""
    m = a_out.shape[0]
    p = a_out.shape[1] // 3
    a_out3 = a_out.reshape(m, p, 3)
    c_out3 = c_out.reshape(m, p, 3)

    def stats(outs, ins):
        grads = (outs - ins).reshape(m, p, 3)
        mus = grads.mean(axis=1)
        devs = grads - mus[:, None, :]
        if dummies:
            extra = np.concatenate([np.zeros((1, 3)), np.eye(3), -np.eye(3)])
            devs = np.concatenate([devs, extra[None] - mus[:, None, :]], axis=1)
        covs = np.einsum("rpi,rpj->rij", devs, devs) / devs.shape[1]
        return mus, np.linalg.inv(covs + eps * np.eye(3))

    mu_a, prec_a = stats(a_out, a_in)
    mu_c, prec_c = stats(c_out, c_in)

    d_lr = np.empty((m, m))
    d_rl = np.empty((m, m))
    for r in range(m):
        dev = c_out3 - (a_out3[r] + mu_a[r])  # (m, p, 3) cross-gradient deviations
        d_lr[r] = np.einsum("cpi,ij,cpj->c", dev, prec_a[r], dev)
    for c in range(m):
        dev = a_out3 - (c_out3[c] + mu_c[c])  # leftward steps, candidate c's model
        d_rl[:, c] = np.einsum("api,ij,apj->a", dev, prec_c[c], dev)
    return d_lr + d_rl


def classical_all_pairs(puzzle: Puzzle, method: str, variant: str) -> CMMatrix:
    """Raw CM matrix of a classical measure over all junctions of a puzzle."""
    if method not in CLASSICAL_METHODS:
        raise ValueError(f"unknown classical method {method!r}")
    stack = np.stack([p.pixels for p in sorted(puzzle.pieces, key=lambda p: p.id)])
    stack = stack.astype(np.float64)
    stack = stack * MGC_SCALE if method == "mgc" else rgb_to_lab(stack)
    a_out, a_in, c_out, c_in = _edge_features(stack)

    if method == "ssd":
        scores = cdist(a_out, c_out, "sqeuclidean")
    elif method == "l1":
        scores = cdist(a_out, c_out, "cityblock")
    elif method == "pbc":
        scores = (_pbc_pairs(2.0 * a_out - a_in, c_out, PBC_P, PBC_Q)
                  + _pbc_pairs(2.0 * c_out - c_in, a_out, PBC_P, PBC_Q).T)
    else:
        scores = _mgc_pairs(a_out, a_in, c_out, c_in, dummies=True, eps=MGC_EPS)

    scores = scores.astype(np.float32)
    scores[_sentinel_mask(puzzle.n_pieces, variant)] = np.inf
    return CMMatrix(scores, variant, RAW, method)
