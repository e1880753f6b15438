"""Twin edge-embedding networks, the four-channel ensemble, and the pairwise
end-to-end scorer.

A twin pair holds a left network and a right network with one shared layer
stack. The left network embeds a piece with respect to a junction edge rotated
to face RIGHT; the right network embeds the mating piece with its edge rotated
to face LEFT. The ensemble averages the twin distances of four pairs fed with
the R, G, B slices and the full RGB input. The end-to-end model scores a
horizontally concatenated piece pair directly through a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .distances import distance
from .puzzle import LEFT, RIGHT, Piece, rotate_pixels, rotations_to_face

ENSEMBLE_CHANNELS = ("r", "g", "b", "rgb")
_CHANNEL_INDEX = {"r": 0, "g": 1, "b": 2, "rgb": None}


@dataclass
class TwinPair:
    left: nn.Network
    right: nn.Network
    d: int
    piece_size: int
    input_channels: int = 3

    def __post_init__(self):
        if [type(s) for s in self.left.specs] != [type(s) for s in self.right.specs]:
            raise ValueError("left and right networks must share one layer stack")

    @classmethod
    def init(cls, piece_size: int, d: int, seed: int, input_channels: int = 3) -> "TwinPair":
        specs = nn.embedding_stack(piece_size, piece_size, input_channels, d)
        state = np.random.SeedSequence(seed).generate_state(2)
        return cls(nn.he_init(specs, int(state[0])), nn.he_init(specs, int(state[1])),
                   d, piece_size, input_channels)

    def param_count(self) -> int:
        return self.left.param_count() + self.right.param_count()


@dataclass
class TenLarge:
    twins: dict[str, TwinPair]  # keys: r, g, b, rgb

    def __post_init__(self):
        if tuple(self.twins) != ENSEMBLE_CHANNELS:
            raise ValueError(f"ensemble needs twins {ENSEMBLE_CHANNELS}, got {tuple(self.twins)}")
        d = {t.d for t in self.twins.values()}
        if len(d) != 1:
            raise ValueError("all ensemble twins must share the embedding dimension")

    @classmethod
    def init(cls, piece_size: int, d: int, seed: int) -> "TenLarge":
        state = np.random.SeedSequence(seed).generate_state(len(ENSEMBLE_CHANNELS))
        twins = {}
        for ch, s in zip(ENSEMBLE_CHANNELS, state):
            twins[ch] = TwinPair.init(piece_size, d, int(s),
                                      input_channels=1 if ch != "rgb" else 3)
        return cls(twins)

    @property
    def d(self) -> int:
        return self.twins["rgb"].d

    @property
    def piece_size(self) -> int:
        return self.twins["rgb"].piece_size

    def param_count(self) -> int:
        return sum(t.param_count() for t in self.twins.values())


@dataclass
class E2EModel:
    net: nn.Network
    piece_size: int

    @classmethod
    def init(cls, piece_size: int, seed: int) -> "E2EModel":
        specs = nn.embedding_stack(piece_size, 2 * piece_size, 3, 1)
        state = np.random.SeedSequence(seed).generate_state(1)
        return cls(nn.he_init(specs, int(state[0])), piece_size)


def slice_channel(pixels: np.ndarray, channel: str) -> np.ndarray:
    """Select one color plane (keeping a channel axis) or pass RGB through."""
    idx = _CHANNEL_INDEX[channel]
    return pixels if idx is None else pixels[..., idx:idx + 1]


def center_input(pixels: np.ndarray) -> np.ndarray:
    """Shift [0,1] pixels to [-0.5, 0.5] right before a network sees them.

    Centered inputs condition the bias-free stack much better; every training
    and inference path must go through this (and only once).
    """
    return pixels.astype(np.float32) - np.float32(0.5)


def oriented_input(pixels: np.ndarray, edge: int, side: int) -> np.ndarray:
    """Rotate piece pixels so that `edge` faces the given side (RIGHT or LEFT)."""
    return rotate_pixels(pixels, rotations_to_face(edge, side))


def _run(net: nn.Network, x: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(net, center_input(x))
    return out


def embed_left(twin: TwinPair, piece: Piece, edge: int) -> np.ndarray:
    """Embedding of `piece` with respect to `edge` rotated to face RIGHT."""
    if piece.size != twin.piece_size:
        raise ValueError(f"piece size {piece.size} != network input {twin.piece_size}")
    return _run(twin.left, oriented_input(piece.pixels, edge, RIGHT))


def embed_right(twin: TwinPair, piece: Piece, edge: int) -> np.ndarray:
    """Embedding of `piece` with respect to `edge` rotated to face LEFT."""
    if piece.size != twin.piece_size:
        raise ValueError(f"piece size {piece.size} != network input {twin.piece_size}")
    return _run(twin.right, oriented_input(piece.pixels, edge, LEFT))


def twin_cm(twin: TwinPair, k_l: Piece, k_r: Piece, measure: str = "l2") -> float:
    """Dissimilarity of k_l's RIGHT edge against k_r's LEFT edge."""
    return distance(embed_left(twin, k_l, RIGHT), embed_right(twin, k_r, LEFT), measure)


def ensemble_cm(model: TenLarge, k_l: Piece, k_r: Piece, measure: str = "l2") -> float:
    """Mean of the four per-channel twin distances for an abutting pair."""
    total = 0.0
    for ch in ENSEMBLE_CHANNELS:
        twin = model.twins[ch]
        zl = _run(twin.left, slice_channel(oriented_input(k_l.pixels, RIGHT, RIGHT), ch))
        zr = _run(twin.right, slice_channel(oriented_input(k_r.pixels, LEFT, LEFT), ch))
        total += distance(zl, zr, measure)
    return total / len(ENSEMBLE_CHANNELS)


def pair_image(left_pixels: np.ndarray, right_pixels: np.ndarray) -> np.ndarray:
    """Concatenate two (P, P, 3) pieces into the (P, 2P, 3) pair input."""
    if left_pixels.shape != right_pixels.shape:
        raise ValueError(f"piece shapes differ: {left_pixels.shape} vs {right_pixels.shape}")
    return np.concatenate([left_pixels, right_pixels], axis=1)


def logistic(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def e2e_score(model: E2EModel, k_l: Piece, k_r: Piece) -> float:
    """Pair dissimilarity in (0, 1): sigmoid of the network logit, lower = more
    compatible (positive pairs carry label 0 in training)."""
    if k_l.size != model.piece_size:
        raise ValueError(f"piece size {k_l.size} != network input {model.piece_size}")
    logit = _run(model.net, pair_image(k_l.pixels, k_r.pixels))
    return float(logistic(logit[0]))


# ---------------------------------------------------------------------------
# Checkpoints: a directory with meta.txt plus one weight container per network
# ---------------------------------------------------------------------------

def _write_meta(path: Path, fields: dict) -> None:
    lines = [f"{k} {v}" for k, v in fields.items()]
    path.write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def _read_meta(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text("ascii").splitlines():
        if line.strip():
            key, _, val = line.partition(" ")
            out[key] = val
    return out


def save_checkpoint(directory, model, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta: dict = {}
    if isinstance(model, TwinPair):
        meta["kind"] = "ten"
        meta["d"] = model.d
        meta["piece_size"] = model.piece_size
        meta["input_channels"] = model.input_channels
        nn.save_network(directory / "left.nnwt", model.left)
        nn.save_network(directory / "right.nnwt", model.right)
    elif isinstance(model, TenLarge):
        meta["kind"] = "ten_large"
        meta["d"] = model.d
        meta["piece_size"] = model.piece_size
        for ch, twin in model.twins.items():
            nn.save_network(directory / f"{ch}_left.nnwt", twin.left)
            nn.save_network(directory / f"{ch}_right.nnwt", twin.right)
    elif isinstance(model, E2EModel):
        meta["kind"] = "e2e"
        meta["piece_size"] = model.piece_size
        nn.save_network(directory / "net.nnwt", model.net)
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    meta.update(extra or {})
    _write_meta(directory / "meta.txt", meta)


def load_checkpoint(directory):
    """Load a checkpoint directory; returns (model, meta dict)."""
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    if not meta_path.exists():
        raise FileNotFoundError(f"no checkpoint at {directory} (missing {meta_path})")
    meta = _read_meta(meta_path)
    kind = meta.get("kind")
    if kind == "ten":
        left, _ = nn.load_network(directory / "left.nnwt")
        right, _ = nn.load_network(directory / "right.nnwt")
        model = TwinPair(left, right, int(meta["d"]), int(meta["piece_size"]),
                         int(meta.get("input_channels", "3")))
    elif kind == "ten_large":
        twins = {}
        for ch in ENSEMBLE_CHANNELS:
            left, _ = nn.load_network(directory / f"{ch}_left.nnwt")
            right, _ = nn.load_network(directory / f"{ch}_right.nnwt")
            twins[ch] = TwinPair(left, right, int(meta["d"]), int(meta["piece_size"]),
                                 1 if ch != "rgb" else 3)
        model = TenLarge(twins)
    elif kind == "e2e":
        net, _ = nn.load_network(directory / "net.nnwt")
        model = E2EModel(net, int(meta["piece_size"]))
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r} in {meta_path}")
    return model, meta
