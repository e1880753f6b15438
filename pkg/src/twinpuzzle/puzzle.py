"""Square-piece puzzles: tiling, boundary erosion, rotations and scrambling.

Conventions used project-wide:
  * pixel arrays are float32 in [0, 1], shape (H, W, 3), row-major piece ids;
  * orientations are counter-clockwise quarter turns, 0..3;
  * edges are indexed TOP=0, RIGHT=1, BOTTOM=2, LEFT=3. Rotating a piece one
    quarter turn CCW moves the content of edge e to edge (e - 1) % 4, i.e.
    Right -> Top -> Left -> Bottom -> Right.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TOP, RIGHT, BOTTOM, LEFT = 0, 1, 2, 3
EDGE_NAMES = ("top", "right", "bottom", "left")

# erosion modes
NO_EROSION = "none"
CROPPED = "cropped"
ZERO_FRAME = "zeroframe"


def opposite_edge(edge: int) -> int:
    return (edge + 2) % 4


def rotations_to_face(edge: int, target: int) -> int:
    """CCW quarter turns that bring `edge` to the `target` side of a piece."""
    return (edge - target) % 4


@dataclass
class Piece:
    id: int
    pixels: np.ndarray  # (P, P, 3) float32 in [0, 1]
    erosion_mode: str = NO_EROSION
    erosion: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[0] != px.shape[1] or px.shape[2] != 3:
            raise ValueError(f"piece pixels must be (P, P, 3), got {px.shape}")
        self.pixels = px

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class Puzzle:
    rows: int
    cols: int
    pieces: list[Piece]
    # piece id -> (row, col, orientation); applying `orientation` CCW quarter
    # turns to the stored pixels and placing them at (row, col) restores the image
    ground_truth: dict[int, tuple[int, int, int]]
    piece_size: int
    erosion: int = 0
    erosion_mode: str = NO_EROSION
    variant: str = "type1"
    name: str = ""
    seed: int | None = None

    def __post_init__(self):
        n = self.rows * self.cols
        if len(self.pieces) != n:
            raise ValueError(f"{len(self.pieces)} pieces for a {self.rows}x{self.cols} grid")
        slots = {(r, c) for r, c, _ in self.ground_truth.values()}
        if len(self.ground_truth) != n or len(slots) != n:
            raise ValueError("ground truth is not a bijection onto the grid")

    @property
    def n_pieces(self) -> int:
        return self.rows * self.cols

    def piece_by_id(self, pid: int) -> Piece:
        for p in self.pieces:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def grid_of_ids(self) -> np.ndarray:
        """(rows, cols) array of piece ids at their ground-truth slots."""
        grid = np.full((self.rows, self.cols), -1, dtype=np.int64)
        for pid, (r, c, _) in self.ground_truth.items():
            grid[r, c] = pid
        return grid

    def adjacent_pairs(self) -> list[tuple[int, int, int]]:
        """Ground-truth junctions as (left/top id, right/bottom id, direction).

        Direction is the grid direction from the first to the second piece:
        RIGHT for horizontal neighbors, BOTTOM for vertical ones. There are
        2*rows*cols - rows - cols of them.
        """
        grid = self.grid_of_ids()
        out = []
        for r in range(self.rows):
            for c in range(self.cols):
                if c + 1 < self.cols:
                    out.append((int(grid[r, c]), int(grid[r, c + 1]), RIGHT))
                if r + 1 < self.rows:
                    out.append((int(grid[r, c]), int(grid[r + 1, c]), BOTTOM))
        return out


def directed_junctions(puzzle: Puzzle) -> list[tuple[int, int, int, int]]:
    """(anchor id, anchor edge, mate id, mate edge) for both views of every
    ground-truth adjacency, in stored-piece coordinates.

    The anchor edge faces its mate; stored edges account for each piece's
    scramble orientation. A rows x cols puzzle yields 2*(2*rows*cols-rows-cols)
    directed junctions.
    """
    out = []
    for i, j, direction in puzzle.adjacent_pairs():
        o_i = puzzle.ground_truth[i][2]
        o_j = puzzle.ground_truth[j][2]
        a = (direction + o_i) % 4
        b = (opposite_edge(direction) + o_j) % 4
        out.append((i, a, j, b))
        out.append((j, b, i, a))
    return out


def rotate_pixels(pixels: np.ndarray, quarter_turns: int) -> np.ndarray:
    k = quarter_turns % 4
    return pixels if k == 0 else np.ascontiguousarray(np.rot90(pixels, k))


def rotate_piece(piece: Piece, quarter_turns: int) -> Piece:
    """Rotate CCW by the given quarter turns; id and erosion state preserved."""
    return replace(piece, pixels=rotate_pixels(piece.pixels, quarter_turns))


def tile_image(img: np.ndarray, piece_size: int, name: str = "") -> Puzzle:
    """Cut an (H, W, 3) image into floor(H/P) x floor(W/P) pieces, row-major.

    Trailing pixels that do not fill a whole piece are discarded.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    if piece_size < 4:
        raise ValueError(f"piece size {piece_size} < 4")
    h, w = img.shape[:2]
    rows, cols = h // piece_size, w // piece_size
    if rows < 1 or cols < 1:
        raise ValueError(f"image {h}x{w} smaller than piece size {piece_size}")
    pieces = []
    gt = {}
    for r in range(rows):
        for c in range(cols):
            pid = r * cols + c
            tile = img[r * piece_size:(r + 1) * piece_size,
                       c * piece_size:(c + 1) * piece_size]
            pieces.append(Piece(pid, np.ascontiguousarray(tile)))
            gt[pid] = (r, c, 0)
    return Puzzle(rows, cols, pieces, gt, piece_size, name=name)


def erode_piece(piece: Piece, erosion: int, mode: str) -> Piece:
    """Remove an e-pixel boundary frame.

    CROPPED keeps the central (P-2e) square; ZERO_FRAME keeps the piece size
    and zeroes the frame. A piece can only be eroded once.
    """
    if piece.erosion_mode != NO_EROSION:
        raise ValueError(f"piece {piece.id} already eroded ({piece.erosion_mode})")
    if mode not in (CROPPED, ZERO_FRAME):
        raise ValueError(f"unknown erosion mode {mode!r}")
    if erosion < 0 or 2 * erosion >= piece.size:
        raise ValueError(f"erosion {erosion} too large for piece size {piece.size}")
    e = erosion
    if e == 0:
        px = piece.pixels
    elif mode == CROPPED:
        px = np.ascontiguousarray(piece.pixels[e:-e, e:-e])
    else:
        px = piece.pixels.copy()
        px[:e] = 0.0
        px[-e:] = 0.0
        px[:, :e] = 0.0
        px[:, -e:] = 0.0
    return Piece(piece.id, px, mode, e)


def erode_puzzle(puzzle: Puzzle, erosion: int, mode: str) -> Puzzle:
    pieces = [erode_piece(p, erosion, mode) for p in puzzle.pieces]
    size = pieces[0].size if pieces else puzzle.piece_size
    return replace(puzzle, pieces=pieces, piece_size=size,
                   erosion=erosion, erosion_mode=mode)


def erosion_area_fraction(piece_size: int, erosion: int) -> float:
    """Fraction of piece area removed by an e-pixel frame (e.g. 108/784 for 28, 1)."""
    inner = piece_size - 2 * erosion
    return 1.0 - (inner * inner) / (piece_size * piece_size)


def scramble(puzzle: Puzzle, seed: int, variant: str) -> Puzzle:
    """Permute piece order with a seeded RNG; type2 also rotates pieces randomly.

    Ground truth is updated so that rotating each stored piece by its recorded
    orientation and placing it at its recorded slot restores the original image.
    """
    if variant not in ("type1", "type2"):
        raise ValueError(f"variant must be type1 or type2, got {variant!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = puzzle.n_pieces
    order = rng.permutation(n)
    spins = rng.integers(0, 4, size=n) if variant == "type2" else np.zeros(n, dtype=np.int64)
    pieces = []
    gt = {}
    for new_id, (old_idx, spin) in enumerate(zip(order, spins)):
        src = puzzle.pieces[old_idx]
        r, c, o = puzzle.ground_truth[src.id]
        if o != 0:
            raise ValueError("scramble expects an unscrambled puzzle")
        px = rotate_pixels(src.pixels, int(spin))
        pieces.append(Piece(new_id, px, src.erosion_mode, src.erosion))
        gt[new_id] = (r, c, int((4 - spin) % 4))  # undo rotation to restore
    return replace(puzzle, pieces=pieces, ground_truth=gt, variant=variant, seed=seed)
