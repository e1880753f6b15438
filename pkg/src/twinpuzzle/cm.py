"""Edge-to-edge compatibility matrices and the fast embedding pipeline.

A compatibility matrix is (4N) x (4N): row 4*i+a scores anchor piece i with
edge a rotated to face RIGHT, column 4*j+b scores candidate piece j with edge b
rotated to face LEFT. Same-piece entries carry a +inf sentinel; the type1
variant additionally restricts candidates to the mating edge b = opposite(a).
The mirrored view of junction (i,a,j,b) is (j,b,i,a), i.e. the transpose.

The fast pipeline runs each twin network only 4N times per side, caches the
(N, 4, d) embedding tensors, and evaluates the 16N^2 pairwise scores with a
plain vector distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distances import pairwise
from .model import TenLarge, TwinPair, center_input, slice_channel
from .nn import forward
from .puzzle import LEFT, RIGHT, Puzzle, directed_junctions, opposite_edge, rotations_to_face

RAW, ROW_NORMALIZED, SYMMETRIZED = "raw", "row_normalized", "symmetrized"


@dataclass
class EdgeEmbeddings:
    """Cached per-edge embeddings: t_left[k, e] = embed_left(piece k, edge e)."""
    t_left: np.ndarray   # (N, 4, d) float32
    t_right: np.ndarray  # (N, 4, d) float32
    fingerprint: str

    def __post_init__(self):
        if self.t_left.shape != self.t_right.shape or self.t_left.ndim != 3 \
                or self.t_left.shape[1] != 4:
            raise ValueError(f"bad embedding tensor shapes {self.t_left.shape} / "
                             f"{self.t_right.shape}")
        if not (np.all(np.isfinite(self.t_left)) and np.all(np.isfinite(self.t_right))):
            raise ValueError("embeddings contain non-finite values")

    @property
    def n_pieces(self) -> int:
        return self.t_left.shape[0]

    @property
    def d(self) -> int:
        return self.t_left.shape[2]


@dataclass
class CMMatrix:
    scores: np.ndarray  # (4N, 4N) float32, +inf at excluded pairings
    variant: str        # type1 | type2
    state: str          # raw | row_normalized | symmetrized
    measure: str = ""
    constant_rows: int = 0  # rows min-max scaling had to fill with 0.5

    @property
    def n_pieces(self) -> int:
        return self.scores.shape[0] // 4

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.scores)


def _oriented_stacks(puzzle: Puzzle) -> tuple[np.ndarray, np.ndarray]:
    """(N,4,P,P,3) inputs for the left side (edge->RIGHT) and right side (edge->LEFT)."""
    stack = np.stack([p.pixels for p in sorted(puzzle.pieces, key=lambda p: p.id)])
    n, p = stack.shape[0], stack.shape[1]
    left_in = np.empty((n, 4, p, p, stack.shape[3]), dtype=np.float32)
    right_in = np.empty_like(left_in)
    for edge in range(4):
        left_in[:, edge] = np.rot90(stack, rotations_to_face(edge, RIGHT), axes=(1, 2))
        right_in[:, edge] = np.rot90(stack, rotations_to_face(edge, LEFT), axes=(1, 2))
    return left_in, right_in


def extract_embeddings(twin: TwinPair, puzzle: Puzzle, channel: str = "rgb") -> EdgeEmbeddings:
    """Run each side network exactly 4N times and cache the edge embeddings."""
    if puzzle.piece_size != twin.piece_size:
        raise ValueError(f"piece size {puzzle.piece_size} != network input {twin.piece_size}")
    left_in, right_in = _oriented_stacks(puzzle)
    n = left_in.shape[0]
    flat_l = slice_channel(left_in.reshape((4 * n,) + left_in.shape[2:]), channel)
    flat_r = slice_channel(right_in.reshape((4 * n,) + right_in.shape[2:]), channel)
    z_l, _ = forward(twin.left, center_input(flat_l))
    z_r, _ = forward(twin.right, center_input(flat_r))
    fp = f"twin:{channel}:d{twin.d}:p{twin.piece_size}:{twin.left.seed}/{twin.right.seed}"
    return EdgeEmbeddings(z_l.reshape(n, 4, twin.d), z_r.reshape(n, 4, twin.d), fp)


def extract_ensemble_embeddings(model: TenLarge, puzzle: Puzzle) -> list[EdgeEmbeddings]:
    """Per-channel embeddings for the four ensemble twins (32N forwards total)."""
    return [extract_embeddings(model.twins[ch], puzzle, channel=ch)
            for ch in model.twins]


def _sentinel_mask(n: int, variant: str) -> np.ndarray:
    """Boolean (4N,4N) mask of entries excluded from ranking."""
    excluded = np.zeros((4 * n, 4 * n), dtype=bool)
    idx = np.arange(4 * n)
    same_piece = (idx[:, None] // 4) == (idx[None, :] // 4)
    excluded |= same_piece
    if variant == "type1":
        a = idx[:, None] % 4
        b = idx[None, :] % 4
        excluded |= b != (a + 2) % 4
    elif variant != "type2":
        raise ValueError(f"variant must be type1 or type2, got {variant!r}")
    return excluded


def all_pairs_cm(emb: EdgeEmbeddings | list[EdgeEmbeddings], measure: str,
                 variant: str) -> CMMatrix:
    """Raw CM matrix from cached embeddings; a list is averaged (ensemble)."""
    members = emb if isinstance(emb, list) else [emb]
    n = members[0].n_pieces
    acc = np.zeros((4 * n, 4 * n), dtype=np.float64)
    for m in members:
        acc += pairwise(m.t_left.reshape(4 * n, -1), m.t_right.reshape(4 * n, -1), measure)
    acc /= len(members)
    scores = acc.astype(np.float32)
    scores[_sentinel_mask(n, variant)] = np.inf
    return CMMatrix(scores, variant, RAW, measure)


def e2e_all_pairs(model, puzzle: Puzzle, variant: str, chunk: int = 8192) -> CMMatrix:
    """Raw CM matrix from the pair scorer: one network forward per junction.

    Runs 16N(N-1) forwards for type2 (4N(N-1) for type1), batched in chunks;
    this is the slow reference route the embedding pipeline is measured against.
    """
    from .model import logistic  # local import avoids a cycle at module load

    n = puzzle.n_pieces
    if puzzle.piece_size != model.piece_size:
        raise ValueError(f"piece size {puzzle.piece_size} != network input {model.piece_size}")
    left_in, right_in = _oriented_stacks(puzzle)
    p = puzzle.piece_size
    left_flat = left_in.reshape(4 * n, p, p, 3)
    right_flat = right_in.reshape(4 * n, p, p, 3)
    scores = np.full((4 * n, 4 * n), np.inf, dtype=np.float32)
    rows, cols = np.nonzero(~_sentinel_mask(n, variant))
    for s in range(0, len(rows), chunk):
        e = min(s + chunk, len(rows))
        pairs = np.concatenate([left_flat[rows[s:e]], right_flat[cols[s:e]]], axis=2)
        out, _ = forward(model.net, center_input(pairs))
        scores[rows[s:e], cols[s:e]] = logistic(out[:, 0]).astype(np.float32)
    return CMMatrix(scores, variant, RAW, "e2e")


def normalize_rows(cm: CMMatrix) -> CMMatrix:
    """Min-max scale every anchor row over its finite entries to [0, 1].

    Rows whose finite entries are all equal cannot be scaled and are filled
    with 0.5; the count is reported on the result.
    """
    if cm.state != RAW:
        raise ValueError(f"normalize_rows expects a raw matrix, got {cm.state}")
    finite = cm.finite_mask()
    vals = cm.scores.astype(np.float64)
    lo = np.min(np.where(finite, vals, np.inf), axis=1, keepdims=True)
    hi = np.max(np.where(finite, vals, -np.inf), axis=1, keepdims=True)
    nonempty = finite.any(axis=1, keepdims=True)
    flat = nonempty & (hi == lo)
    span = np.where(hi > lo, hi - lo, 1.0)
    with np.errstate(invalid="ignore"):  # excluded entries produce inf-inf
        scaled = np.where(flat, 0.5, (vals - lo) / span)
    out = np.where(finite, scaled, np.inf).astype(np.float32)
    return CMMatrix(out, cm.variant, ROW_NORMALIZED, cm.measure,
                    constant_rows=int(np.count_nonzero(flat)))


def symmetrize(cm: CMMatrix) -> CMMatrix:
    """Average every junction with its 180-degree mirror: (i,a,j,b) <-> (j,b,i,a).

    The mirror lives at the transposed index, so this is (M + M^T) / 2; the
    sentinel pattern is transpose-symmetric and unaffected.
    """
    if cm.state != ROW_NORMALIZED:
        raise ValueError(f"symmetrize expects a row-normalized matrix, got {cm.state}")
    out = ((cm.scores + cm.scores.T) * np.float32(0.5)).astype(np.float32)
    return CMMatrix(out, cm.variant, SYMMETRIZED, cm.measure, cm.constant_rows)


def oracle_cm(puzzle: Puzzle, variant: str, anti: bool = False) -> CMMatrix:
    """Ground-truth test matrix: 0 at true junctions, 1 elsewhere (swapped if anti)."""
    n = puzzle.n_pieces
    good, bad = (1.0, 0.0) if anti else (0.0, 1.0)
    scores = np.full((4 * n, 4 * n), bad, dtype=np.float32)
    for i, a, j, b in directed_junctions(puzzle):
        scores[4 * i + a, 4 * j + b] = good
    scores[_sentinel_mask(n, variant)] = np.inf
    return CMMatrix(scores, variant, RAW, "oracle" if not anti else "anti-oracle")


def true_junction_map(puzzle: Puzzle) -> dict[tuple[int, int], tuple[int, int]]:
    """anchor (piece, edge) -> its ground-truth mate (piece, edge)."""
    return {(i, a): (j, b) for i, a, j, b in directed_junctions(puzzle)}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_MAGIC = "CMM1"


def save_cm(path, cm: CMMatrix) -> None:
    """Binary container: text header, then (4N)^2 little-endian float32."""
    header = "\n".join([
        _MAGIC,
        f"n_pieces {cm.n_pieces}",
        f"variant {cm.variant}",
        f"state {cm.state}",
        f"measure {cm.measure}",
        f"constant_rows {cm.constant_rows}",
        "end",
    ]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(cm.scores, dtype="<f4").tobytes())


def load_cm(path) -> CMMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    cut = blob.index(b"\nend\n") + len(b"\nend\n")
    head: dict[str, str] = {}
    lines = blob[:cut].decode("ascii").splitlines()
    if lines[0] != _MAGIC:
        raise ValueError(f"bad magic {lines[0]!r}")
    for line in lines[1:]:
        if line != "end":
            key, _, val = line.partition(" ")
            head[key] = val
    n = int(head["n_pieces"])
    scores = np.frombuffer(blob[cut:], dtype="<f4").reshape(4 * n, 4 * n).copy()
    return CMMatrix(scores, head["variant"], head["state"], head.get("measure", ""),
                    int(head.get("constant_rows", "0")))


def cm_to_csv(path, cm: CMMatrix) -> None:
    """Finite entries as CSV rows: anchor piece, anchor edge, piece, edge, score."""
    lines = ["i,a,j,b,score"]
    rows, cols = np.nonzero(cm.finite_mask())
    for r, c in zip(rows, cols):
        lines.append(f"{r // 4},{r % 4},{c // 4},{c % 4},{cm.scores[r, c]!r}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))
