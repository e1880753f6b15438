"""Greedy frontier reconstruction and the Top-1 / neighbor-accuracy metrics.

The solver is deliberately simple and bit-stable: it seeds with the piece of
the most confident anchor edge, then repeatedly attaches the globally best
remaining junction (score ascending, anchor confidence descending, junction id
ascending) to the frontier, inside a fixed rows x cols frame. It makes no
attempt at global optimization, so absolute accuracies only support
CM-versus-CM comparisons.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .cm import CMMatrix, SYMMETRIZED
from .puzzle import Puzzle, directed_junctions

# grid deltas indexed by facing direction: up, right, down, left
_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass
class Assembly:
    piece_ids: np.ndarray   # (rows, cols) int, -1 for empty
    rotations: np.ndarray   # (rows, cols) int quarter turns CCW
    variant: str

    @property
    def rows(self) -> int:
        return self.piece_ids.shape[0]

    @property
    def cols(self) -> int:
        return self.piece_ids.shape[1]

    def is_complete(self) -> bool:
        return bool(np.all(self.piece_ids >= 0))

    def positions(self) -> dict[int, tuple[int, int, int]]:
        """piece id -> (row, col, rotation) for every placed piece."""
        out = {}
        for r in range(self.rows):
            for c in range(self.cols):
                pid = int(self.piece_ids[r, c])
                if pid >= 0:
                    out[pid] = (r, c, int(self.rotations[r, c]))
        return out


@dataclass
class MatchCandidate:
    junction: tuple[int, int, int, int]
    score: float
    confidence: float  # second best / best score of the anchor edge, >= 1


def anchor_confidences(cm: CMMatrix) -> np.ndarray:
    """Per anchor edge: second_best / best over its finite candidates."""
    vals = np.where(cm.finite_mask(), cm.scores.astype(np.float64), np.nan)
    part = np.sort(vals, axis=1)[:, :2]  # nan sorts last, rows have >= 2 candidates
    best, second = part[:, 0], part[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        conf = np.where(best > 0.0, second / best,
                        np.where(second > 0.0, np.inf, 1.0))
    return conf


def top1_accuracy(cm: CMMatrix, puzzle: Puzzle, variant: str | None = None) -> float:
    """Fraction of anchor edges whose true mate is the strict row minimum.

    Only anchor edges with a ground-truth neighbor count; ties are failures.
    type1 rows rank N-1 candidates (mating edge fixed), type2 rows 4(N-1).
    """
    variant = variant or cm.variant
    if variant != cm.variant:
        raise ValueError(f"matrix holds variant {cm.variant}, requested {variant}")
    finite = cm.finite_mask()
    hits = 0
    anchors = 0
    for i, a, j, b in directed_junctions(puzzle):
        row = 4 * i + a
        true_col = 4 * j + b
        if not finite[row, true_col]:
            raise ValueError(f"true junction ({i},{a},{j},{b}) excluded from the matrix")
        anchors += 1
        row_vals = cm.scores[row][finite[row]]
        s_true = cm.scores[row, true_col]
        if np.count_nonzero(row_vals < s_true) == 0 and np.count_nonzero(row_vals == s_true) == 1:
            hits += 1
    return hits / anchors


def greedy_reconstruct(cm: CMMatrix, rows: int, cols: int, variant: str,
                       seed: int = 0) -> Assembly:
    """Deterministic best-first placement of all pieces within the frame.

    `seed` is part of the interface for solver variants with stochastic
    tie-breaking; this implementation is fully ordered and ignores it.
    """
    if cm.state != SYMMETRIZED:
        raise ValueError(f"solver expects a symmetrized matrix, got state {cm.state}")
    if variant != cm.variant:
        raise ValueError(f"matrix holds variant {cm.variant}, requested {variant}")
    n = cm.n_pieces
    if rows * cols != n:
        raise ValueError(f"{rows}x{cols} frame cannot hold {n} pieces")

    finite = cm.finite_mask()
    conf = anchor_confidences(cm)
    scores = cm.scores

    # seed piece: anchor of the most confident junction (ties: score, then id)
    best_cols = np.empty(4 * n, dtype=np.int64)
    best_scores = np.empty(4 * n)
    for r in range(4 * n):
        cand = np.flatnonzero(finite[r])
        c = cand[np.argmin(scores[r][cand])]  # argmin takes the first on ties
        best_cols[r] = c
        best_scores[r] = scores[r, c]
    order = sorted(range(4 * n), key=lambda r: (-conf[r], best_scores[r], r))
    seed_piece = order[0] // 4

    placed: dict[int, tuple[int, int, int]] = {}   # pid -> (row, col, rot)
    occupied: dict[tuple[int, int], int] = {}
    bbox = [0, 0, 0, 0]  # minr, maxr, minc, maxc

    def frame_ok(r: int, c: int) -> bool:
        minr, maxr = min(bbox[0], r), max(bbox[1], r)
        minc, maxc = min(bbox[2], c), max(bbox[3], c)
        h, w = maxr - minr + 1, maxc - minc + 1
        if h <= rows and w <= cols:
            return True
        # a globally rotated solution is equivalent for type2 puzzles
        return variant == "type2" and h <= cols and w <= rows

    heap: list[tuple[float, float, tuple[int, int, int, int]]] = []

    def place(pid: int, r: int, c: int, rot: int) -> None:
        placed[pid] = (r, c, rot)
        occupied[(r, c)] = pid
        bbox[0], bbox[1] = min(bbox[0], r), max(bbox[1], r)
        bbox[2], bbox[3] = min(bbox[2], c), max(bbox[3], c)
        for a in range(4):
            d = (a - rot) % 4
            slot = (r + _DELTAS[d][0], c + _DELTAS[d][1])
            if slot in occupied:
                continue
            row = 4 * pid + a
            for col in np.flatnonzero(finite[row]):
                j = col // 4
                if j not in placed:
                    heapq.heappush(heap, (float(scores[row, col]), -float(conf[row]),
                                          (pid, a, j, col % 4)))

    place(seed_piece, 0, 0, 0)
    while len(placed) < n:
        if not heap:
            raise RuntimeError("greedy solver ran out of candidates before completing")
        score, negconf, (i, a, j, b) = heapq.heappop(heap)
        if j in placed:
            continue
        pr, pc, prot = placed[i]
        d = (a - prot) % 4
        slot = (pr + _DELTAS[d][0], pc + _DELTAS[d][1])
        if slot in occupied or not frame_ok(*slot):
            continue
        place(j, slot[0], slot[1], (b - d - 2) % 4)

    height = bbox[1] - bbox[0] + 1
    width = bbox[3] - bbox[2] + 1
    piece_ids = np.full((height, width), -1, dtype=np.int64)
    rotations = np.zeros((height, width), dtype=np.int64)
    for pid, (r, c, rot) in placed.items():
        piece_ids[r - bbox[0], c - bbox[2]] = pid
        rotations[r - bbox[0], c - bbox[2]] = rot
    return Assembly(piece_ids, rotations, variant)


def neighbor_accuracy(asm: Assembly, puzzle: Puzzle) -> float:
    """Fraction of ground-truth adjacencies realized with the same contact.

    A junction counts when the two pieces are grid neighbors in the assembly
    and the stored edges touching each other are the ground-truth pair, which
    captures both the relative spatial relation and the relative orientation.
    The check compares stored-edge contacts, so it is invariant under a global
    rotation of the assembly: the reported value equals the maximum over the
    four globally rotated copies.
    """
    if not asm.is_complete():
        raise ValueError("neighbor accuracy needs a complete assembly")
    pos = asm.positions()
    junctions = [(i, a, j, b) for i, a, j, b in directed_junctions(puzzle)]
    matched = 0
    for i, a, j, b in junctions:
        ri, ci, rot_i = pos[i]
        rj, cj, rot_j = pos[j]
        dr, dc = rj - ri, cj - ci
        if (dr, dc) not in _DELTAS:
            continue
        d = _DELTAS.index((dr, dc))
        alpha = (d + rot_i) % 4
        beta = (d + 2 + rot_j) % 4
        if alpha == a and beta == b:
            matched += 1
    # directed list counts each adjacency twice, and so does the scan above
    return matched / len(junctions)


def save_assembly(asm: Assembly, path) -> None:
    """Write an assembly in the puzzle manifest format (placements only)."""
    lines = [
        f"rows {asm.rows}",
        f"cols {asm.cols}",
        f"variant {asm.variant}",
    ]
    for pid, (r, c, rot) in sorted(asm.positions().items()):
        lines.append(f"piece {pid} {r} {c} {rot} none")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))


def load_assembly(path) -> Assembly:
    head: dict[str, str] = {}
    placements = []
    for line in open(path, encoding="ascii"):
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key == "piece":
            pid, r, c, rot, _mode = rest.split()
            placements.append((int(pid), int(r), int(c), int(rot)))
        else:
            head[key] = rest
    rows, cols = int(head["rows"]), int(head["cols"])
    ids = np.full((rows, cols), -1, dtype=np.int64)
    rots = np.zeros((rows, cols), dtype=np.int64)
    for pid, r, c, rot in placements:
        ids[r, c] = pid
        rots[r, c] = rot
    return Assembly(ids, rots, head.get("variant", "type1"))


def render_assembly(asm: Assembly, puzzle: Puzzle) -> np.ndarray:
    """Paint the assembled grid into one (rows*P, cols*P, 3) image."""
    from .puzzle import rotate_pixels

    p = puzzle.piece_size
    out = np.zeros((asm.rows * p, asm.cols * p, 3), dtype=np.float32)
    by_id = {piece.id: piece for piece in puzzle.pieces}
    for r in range(asm.rows):
        for c in range(asm.cols):
            pid = int(asm.piece_ids[r, c])
            if pid >= 0:
                px = rotate_pixels(by_id[pid].pixels, int(asm.rotations[r, c]))
                out[r * p:(r + 1) * p, c * p:(c + 1) * p] = px
    return out
