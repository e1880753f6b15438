"""Image decoding and puzzle directory serialization.

A puzzle directory holds one PNG per piece plus a plain-text manifest:
header lines with the grid shape and generation settings, then one line per
piece: id, row, col, orientation, erosion mode.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .puzzle import NO_EROSION, Piece, Puzzle, erosion_area_fraction

MANIFEST = "manifest.txt"


def load_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file to an (H, W, 3) float32 array in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return arr


def save_image(path, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) array in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64) * 255.0, 0, 255)
    Image.fromarray(np.round(arr).astype(np.uint8)).save(path)


def save_puzzle(puzzle: Puzzle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"rows {puzzle.rows}",
        f"cols {puzzle.cols}",
        f"piece_size {puzzle.piece_size}",
        f"erosion {puzzle.erosion}",
        f"erosion_mode {puzzle.erosion_mode}",
        f"variant {puzzle.variant}",
        f"seed {'none' if puzzle.seed is None else puzzle.seed}",
        f"name {puzzle.name}",
    ]
    if puzzle.erosion_mode != NO_EROSION:
        base = puzzle.piece_size + (2 * puzzle.erosion if puzzle.erosion_mode == "cropped" else 0)
        frac = erosion_area_fraction(base, puzzle.erosion)
        lines.append(f"erosion_area_fraction {frac:.6f}")
    for p in sorted(puzzle.pieces, key=lambda p: p.id):
        r, c, o = puzzle.ground_truth[p.id]
        lines.append(f"piece {p.id} {r} {c} {o} {p.erosion_mode}")
        save_image(directory / f"piece_{p.id:04d}.png", p.pixels)
    (directory / MANIFEST).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def load_puzzle(directory) -> Puzzle:
    directory = Path(directory)
    head: dict[str, str] = {}
    rows_spec: list[tuple[int, int, int, int, str]] = []
    for line in (directory / MANIFEST).read_text("ascii").splitlines():
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "piece":
            pid, r, c, o, mode = rest.split()
            rows_spec.append((int(pid), int(r), int(c), int(o), mode))
        else:
            head[key] = rest
    pieces = []
    gt = {}
    for pid, r, c, o, mode in rows_spec:
        px = load_image(directory / f"piece_{pid:04d}.png")
        pieces.append(Piece(pid, px, mode, int(head.get("erosion", "0")) if mode != NO_EROSION else 0))
        gt[pid] = (r, c, o)
    seed = head.get("seed", "none")
    return Puzzle(
        rows=int(head["rows"]),
        cols=int(head["cols"]),
        pieces=pieces,
        ground_truth=gt,
        piece_size=int(head["piece_size"]),
        erosion=int(head.get("erosion", "0")),
        erosion_mode=head.get("erosion_mode", NO_EROSION),
        variant=head.get("variant", "type1"),
        name=head.get("name", ""),
        seed=None if seed == "none" else int(seed),
    )
