"""Triplet training for twin embedding pairs and BCE training for the
end-to-end pair scorer.

Anchors, positives and negatives all come from the same puzzle. A sampled
junction is directed: each ground-truth adjacency yields two anchor views (from
either side), so anchor inputs cover all four piece rotations. Epoch RNG
streams are derived from (seed, stream, epoch), which makes runs bit-for-bit
reproducible and restartable at epoch granularity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .distances import rowwise_with_grad
from .model import E2EModel, TenLarge, TwinPair, center_input, pair_image, slice_channel
from .puzzle import LEFT, RIGHT, Puzzle, directed_junctions, rotate_pixels, rotations_to_face

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int
    iters_per_epoch: int = 5000
    batch: int = 64
    lr: float = 1e-4
    lr_decay: float = 0.9
    patience: int = 5
    gamma: float = 1.0
    d: int = 40
    measure: str = "l2"
    seed: int = 0


@dataclass
class Triplet:
    """Network-ready pixel views of one sampled junction.

    anchor faces RIGHT toward the junction; positive and negative face LEFT.
    """
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    puzzle_index: int
    anchor_edge: tuple[int, int]
    positive_edge: tuple[int, int]
    negative_edge: tuple[int, int]


def triplet_loss(z_a, z_p, z_n, gamma: float, measure: str = "l2") -> float:
    """max(0, D(anchor, positive) - D(anchor, negative) + gamma)."""
    za = np.asarray(z_a, dtype=np.float32)[None]
    d_ap, _, _ = rowwise_with_grad(za, np.asarray(z_p, dtype=np.float32)[None], measure)
    d_an, _, _ = rowwise_with_grad(za, np.asarray(z_n, dtype=np.float32)[None], measure)
    return float(max(0.0, d_ap[0] - d_an[0] + gamma))


class _PuzzlePool:
    """Pixel arrays and junction tables for a set of training puzzles."""

    def __init__(self, puzzles: list[Puzzle]):
        if not puzzles:
            raise ValueError("need at least one training puzzle")
        self.pixels: list[np.ndarray] = []   # (N, P, P, 3) per puzzle, id-indexed
        self.junctions: list[list[tuple[int, int, int, int]]] = []
        self.n_pieces: list[int] = []
        size = puzzles[0].piece_size
        for pz in puzzles:
            if pz.n_pieces < 2:
                raise ValueError("puzzles must have at least 2 pieces")
            if pz.piece_size != size:
                raise ValueError("all training puzzles must share one piece size")
            stack = np.stack([p.pixels for p in sorted(pz.pieces, key=lambda p: p.id)])
            self.pixels.append(np.ascontiguousarray(stack, dtype=np.float32))
            self.junctions.append(directed_junctions(pz))
            self.n_pieces.append(pz.n_pieces)
        self.piece_size = size


def _draw_negative(rng, n_pieces: int, anchor: int, pos: int, pos_edge: int) -> tuple[int, int]:
    """Uniform over edges of pieces other than the anchor, skipping the positive."""
    pos_rank = (pos if pos < anchor else pos - 1) * 4 + pos_edge
    k = int(rng.integers(0, 4 * (n_pieces - 1) - 1))
    if k >= pos_rank:
        k += 1
    q, edge = divmod(k, 4)
    pid = q if q < anchor else q + 1
    return pid, edge


def sample_triplets(puzzles: list[Puzzle], batch: int, rng: np.random.Generator) -> list[Triplet]:
    """Draw triplets: puzzle uniform, directed junction uniform within it,
    negative uniform over the other pieces' edges excluding the positive."""
    pool = puzzles if isinstance(puzzles, _PuzzlePool) else _PuzzlePool(puzzles)
    out = []
    for _ in range(batch):
        pz = int(rng.integers(0, len(pool.pixels)))
        junctions = pool.junctions[pz]
        i, a, j, b = junctions[int(rng.integers(0, len(junctions)))]
        neg_id, neg_edge = _draw_negative(rng, pool.n_pieces[pz], i, j, b)
        px = pool.pixels[pz]
        out.append(Triplet(
            anchor=rotate_pixels(px[i], rotations_to_face(a, RIGHT)),
            positive=rotate_pixels(px[j], rotations_to_face(b, LEFT)),
            negative=rotate_pixels(px[neg_id], rotations_to_face(neg_edge, LEFT)),
            puzzle_index=pz,
            anchor_edge=(i, a),
            positive_edge=(j, b),
            negative_edge=(neg_id, neg_edge),
        ))
    return out


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")


def _epoch_rng(seed: int, stream: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, epoch])))


def _config_tag(cfg: TrainConfig, extra: str) -> str:
    return (f"{cfg.iters_per_epoch}:{cfg.batch}:{cfg.lr}:{cfg.lr_decay}:{cfg.patience}:"
            f"{cfg.gamma}:{cfg.d}:{cfg.measure}:{cfg.seed}:{extra}")


class _EpochState:
    """Crash-recovery snapshot of a training loop, written once per epoch.

    Restoring continues the run bit-for-bit: per-epoch RNG streams make the
    sampling independent of where the process restarted, and Adam moments,
    the lr schedule and the best-epoch snapshot are all persisted.
    """

    def __init__(self, path, cfg: TrainConfig, extra_tag: str):
        self.path = path
        self.tag = _config_tag(cfg, extra_tag)

    def save(self, next_epoch, nets, states, sched, result, best) -> None:
        arrays = {}
        for name, net in nets.items():
            for k, p in enumerate(net.params):
                arrays[f"{name}{k}"] = p
        for name, st in states.items():
            for k, (m, v) in enumerate(zip(st.m, st.v)):
                arrays[f"m_{name}{k}"] = m
                arrays[f"v_{name}{k}"] = v
            arrays[f"step_{name}"] = np.array(st.step)
        for name, params in best.items():
            for k, p in enumerate(params):
                arrays[f"best_{name}{k}"] = p
        arrays["sched"] = np.array([sched.lr, sched.best, sched.stale])
        arrays["progress"] = np.array([next_epoch, result.best_epoch, result.best_loss])
        arrays["history"] = np.array([[r.epoch, r.mean_loss, r.lr] for r in result.history]
                                     or np.empty((0, 3)))
        tmp = str(self.path) + ".tmp"
        with open(tmp, "wb") as fh:
            np.savez(fh, tag=np.bytes_(self.tag), **arrays)
        import os

        os.replace(tmp, self.path)

    def load(self, nets, states, sched, result, best) -> int:
        """Restore in place; returns the epoch to continue from."""
        with np.load(self.path) as data:
            if data["tag"].tobytes().decode() != self.tag:
                raise ValueError(f"trainer state {self.path} was written with a "
                                 f"different configuration")
            for name, net in nets.items():
                for k in range(len(net.params)):
                    net.params[k][...] = data[f"{name}{k}"]
            for name, st in states.items():
                for k in range(len(st.m)):
                    st.m[k][...] = data[f"m_{name}{k}"]
                    st.v[k][...] = data[f"v_{name}{k}"]
                st.step = int(data[f"step_{name}"])
            for name, params in best.items():
                for k in range(len(params)):
                    params[k][...] = data[f"best_{name}{k}"]
            sched.lr, sched.best, sched.stale = data["sched"]
            sched.stale = int(sched.stale)
            next_epoch, best_epoch, best_loss = data["progress"]
            result.best_epoch = int(best_epoch)
            result.best_loss = float(best_loss)
            result.history = [EpochRecord(int(e), float(l), float(lr))
                              for e, l, lr in data["history"]]
            return int(next_epoch)


class _LrSchedule:
    """Multiply lr by `decay` after `patience` consecutive non-improving epochs."""

    def __init__(self, lr: float, decay: float, patience: int):
        self.lr = lr
        self.decay = decay
        self.patience = patience
        self.best = float("inf")
        self.stale = 0

    def update(self, mean_loss: float) -> bool:
        improved = mean_loss < self.best
        if improved:
            self.best = mean_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.decay
                self.stale = 0
        return improved


def _triplet_epoch(twin: TwinPair, pool: _PuzzlePool, cfg: TrainConfig, rng,
                   states: tuple[nn.AdamState, nn.AdamState], lr: float,
                   channel: str = "rgb") -> float:
    """One epoch of minibatch Adam on the hinge loss; returns the mean loss."""
    left, right = twin.left, twin.right
    st_left, st_right = states
    total = 0.0
    for _ in range(cfg.iters_per_epoch):
        trips = sample_triplets(pool, cfg.batch, rng)
        a_in = slice_channel(np.stack([t.anchor for t in trips]), channel)
        pn_in = slice_channel(np.stack([t.positive for t in trips]
                                       + [t.negative for t in trips]), channel)
        z_a, cache_l = nn.forward(left, center_input(a_in))
        z_pn, cache_r = nn.forward(right, center_input(pn_in))
        z_p, z_n = z_pn[:cfg.batch], z_pn[cfg.batch:]
        d_ap, ga_ap, gp = rowwise_with_grad(z_a, z_p, cfg.measure)
        d_an, ga_an, gn = rowwise_with_grad(z_a, z_n, cfg.measure)
        losses = np.maximum(0.0, d_ap - d_an + cfg.gamma)
        mean_loss = float(losses.mean())
        if not np.isfinite(mean_loss):
            raise nn.DivergenceError(f"non-finite triplet loss {mean_loss}")
        total += mean_loss

        active = np.flatnonzero(losses > 0.0)
        scale = np.float32(1.0 / cfg.batch)
        if len(active):
            g_a = (ga_ap[active] - ga_an[active]) * scale
            grads_l, _ = nn.backward(left, nn.slice_cache(cache_l, active),
                                     g_a, need_input_grad=False)
            both = np.concatenate([active, cfg.batch + active])
            g_pn = np.concatenate([gp[active], -gn[active]]) * scale
            grads_r, _ = nn.backward(right, nn.slice_cache(cache_r, both),
                                     g_pn, need_input_grad=False)
        else:
            grads_l = [np.zeros_like(p) for p in left.params]
            grads_r = [np.zeros_like(p) for p in right.params]
        nn.adam_step(left, grads_l, st_left, lr)
        nn.adam_step(right, grads_r, st_right, lr)
    return total / cfg.iters_per_epoch


def train_ten(cfg: TrainConfig, puzzles: list[Puzzle], channel: str = "rgb",
              seed_stream: int = 0, epoch_callback=None,
              state_dir=None) -> tuple[TwinPair, TrainResult]:
    """Train one twin pair; returns the weights of the best (lowest-loss) epoch.

    `channel` selects the input plane (for ensemble members); `epoch_callback`,
    if given, is called as callback(epoch, twin, result) after every epoch.
    With `state_dir` set, a per-epoch snapshot makes the run restartable
    without changing its outcome.
    """
    pool = _PuzzlePool(puzzles)
    in_ch = 1 if channel != "rgb" else 3
    twin = TwinPair.init(pool.piece_size, cfg.d, seed=cfg.seed * 8 + seed_stream,
                         input_channels=in_ch)
    states = (nn.AdamState.for_network(twin.left), nn.AdamState.for_network(twin.right))
    sched = _LrSchedule(cfg.lr, cfg.lr_decay, cfg.patience)
    result = TrainResult()
    best = (twin.left.copy(), twin.right.copy())
    start_epoch = 0
    snapshot = None
    if state_dir is not None:
        from pathlib import Path

        Path(state_dir).mkdir(parents=True, exist_ok=True)
        snapshot = _EpochState(Path(state_dir) / f"twin_{channel}.npz", cfg,
                               f"twin:{channel}:{seed_stream}:{pool.piece_size}")
        if snapshot.path.exists():
            start_epoch = snapshot.load(
                {"l": twin.left, "r": twin.right},
                {"l": states[0], "r": states[1]}, sched, result,
                {"bl": best[0].params, "br": best[1].params})
            log.info("resuming %s from epoch %d", snapshot.path, start_epoch)
    for epoch in range(start_epoch, cfg.epochs):
        rng = _epoch_rng(cfg.seed, seed_stream, epoch)
        lr = sched.lr
        mean_loss = _triplet_epoch(twin, pool, cfg, rng, states, lr, channel)
        result.history.append(EpochRecord(epoch, mean_loss, lr))
        if sched.update(mean_loss):
            result.best_epoch = epoch
            result.best_loss = mean_loss
            best = (twin.left.copy(), twin.right.copy())
        log.info("epoch %d: mean triplet loss %.5f (lr %.2e)", epoch, mean_loss, lr)
        if snapshot is not None:
            snapshot.save(epoch + 1, {"l": twin.left, "r": twin.right},
                          {"l": states[0], "r": states[1]}, sched, result,
                          {"bl": best[0].params, "br": best[1].params})
        if epoch_callback is not None:
            epoch_callback(epoch, twin, result)
    return replace(twin, left=best[0], right=best[1]), result


def train_ten_large(cfg: TrainConfig, puzzles: list[Puzzle], epoch_callback=None,
                    state_dir=None) -> tuple[TenLarge, dict[str, TrainResult]]:
    """Train the four ensemble twins (R, G, B, RGB) with the shared recipe."""
    twins = {}
    results = {}
    for idx, ch in enumerate(("r", "g", "b", "rgb")):
        cb = (lambda e, t, r, _ch=ch: epoch_callback(_ch, e, t, r)) if epoch_callback else None
        twins[ch], results[ch] = train_ten(cfg, puzzles, channel=ch,
                                           seed_stream=idx + 1, epoch_callback=cb,
                                           state_dir=state_dir)
    return TenLarge(twins), results


# ---------------------------------------------------------------------------
# End-to-end pair scorer
# ---------------------------------------------------------------------------

def _sample_pair_batch(pool: _PuzzlePool, batch: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (inputs, labels): positives (label 0) then negatives (label 1)."""
    n_pos = batch // 2
    images = []
    labels = np.zeros(batch, dtype=np.float32)
    for k in range(batch):
        pz = int(rng.integers(0, len(pool.pixels)))
        junctions = pool.junctions[pz]
        i, a, j, b = junctions[int(rng.integers(0, len(junctions)))]
        px = pool.pixels[pz]
        anchor = rotate_pixels(px[i], rotations_to_face(a, RIGHT))
        if k < n_pos:
            mate = rotate_pixels(px[j], rotations_to_face(b, LEFT))
        else:
            neg_id, neg_edge = _draw_negative(rng, pool.n_pieces[pz], i, j, b)
            mate = rotate_pixels(px[neg_id], rotations_to_face(neg_edge, LEFT))
            labels[k] = 1.0
        images.append(pair_image(anchor, mate))
    return np.stack(images), labels


def train_e2e(cfg: TrainConfig, puzzles: list[Puzzle], epoch_callback=None,
              state_dir=None) -> tuple[E2EModel, TrainResult]:
    """Train the pair scorer with binary cross entropy on balanced batches."""
    pool = _PuzzlePool(puzzles)
    model = E2EModel.init(pool.piece_size, seed=cfg.seed * 8 + 7)
    state = nn.AdamState.for_network(model.net)
    sched = _LrSchedule(cfg.lr, cfg.lr_decay, cfg.patience)
    result = TrainResult()
    best = model.net.copy()
    start_epoch = 0
    snapshot = None
    if state_dir is not None:
        from pathlib import Path

        Path(state_dir).mkdir(parents=True, exist_ok=True)
        snapshot = _EpochState(Path(state_dir) / "e2e.npz", cfg,
                               f"e2e:{pool.piece_size}")
        if snapshot.path.exists():
            start_epoch = snapshot.load({"n": model.net}, {"n": state}, sched, result,
                                        {"bn": best.params})
            log.info("resuming %s from epoch %d", snapshot.path, start_epoch)
    for epoch in range(start_epoch, cfg.epochs):
        rng = _epoch_rng(cfg.seed, 7, epoch)
        lr = sched.lr
        total = 0.0
        for _ in range(cfg.iters_per_epoch):
            x, labels = _sample_pair_batch(pool, cfg.batch, rng)
            logits, cache = nn.forward(model.net, center_input(x))
            logits = logits[:, 0]
            # bce with logits: label*softplus(-x) + (1-label)*softplus(x)
            loss = float(np.mean(labels * np.logaddexp(0.0, -logits)
                                 + (1.0 - labels) * np.logaddexp(0.0, logits)))
            if not np.isfinite(loss):
                raise nn.DivergenceError(f"non-finite bce loss {loss}")
            total += loss
            sig = 1.0 / (1.0 + np.exp(-logits))
            dlogit = ((sig - labels) / cfg.batch).astype(np.float32)[:, None]
            grads, _ = nn.backward(model.net, cache, dlogit, need_input_grad=False)
            nn.adam_step(model.net, grads, state, lr)
        mean_loss = total / cfg.iters_per_epoch
        result.history.append(EpochRecord(epoch, mean_loss, lr))
        if sched.update(mean_loss):
            result.best_epoch = epoch
            result.best_loss = mean_loss
            best = model.net.copy()
        log.info("epoch %d: mean bce loss %.5f (lr %.2e)", epoch, mean_loss, lr)
        if snapshot is not None:
            snapshot.save(epoch + 1, {"n": model.net}, {"n": state}, sched, result,
                          {"bn": best.params})
        if epoch_callback is not None:
            epoch_callback(epoch, model, result)
    return E2EModel(best, model.piece_size), result
