"""Wall-clock benchmark of the all-pairs type2 compatibility computation.

For a synthetic N-piece puzzle the embedding route runs 8N forwards (4N per
side network, 32N for the four-twin ensemble) plus 16N^2 vector distances;
the end-to-end route runs one network forward per ordered junction,
16N(N-1) in total. Timing covers embedding extraction and distance
evaluation (or all pair forwards); model loading is excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .cm import all_pairs_cm, extract_embeddings, extract_ensemble_embeddings
from .model import E2EModel, TenLarge, TwinPair
from .puzzle import Puzzle, tile_image

BENCH_METHODS = ("ten", "ten_large", "e2e")


@dataclass
class BenchRecord:
    n_pieces: int
    method: str
    seconds: float
    forward_passes: int
    distance_evals: int
    threads: int


def expected_forward_passes(method: str, n: int) -> int:
    if method == "ten":
        return 8 * n
    if method == "ten_large":
        return 32 * n
    if method == "e2e":
        return 16 * n * (n - 1)
    raise ValueError(f"unknown bench method {method!r}")


def synthetic_puzzle(n_pieces: int, piece_size: int, seed: int = 0) -> Puzzle:
    """Noise image tiled into an n x 1 layout; content does not affect timing."""
    rng = np.random.Generator(np.random.PCG64(seed))
    img = rng.random((piece_size, piece_size * n_pieces, 3), dtype=np.float32)
    return tile_image(img, piece_size, name=f"bench{n_pieces}")


def _nets_of(model) -> list[nn.Network]:
    if isinstance(model, TwinPair):
        return [model.left, model.right]
    if isinstance(model, TenLarge):
        return [n for t in model.twins.values() for n in (t.left, t.right)]
    return [model.net]


def _reset_counters(model) -> None:
    for net in _nets_of(model):
        net.forward_samples = 0


def _counted_forwards(model) -> int:
    return sum(net.forward_samples for net in _nets_of(model))


def _time_embedding_route(model, puzzle: Puzzle, measure: str) -> tuple[float, int]:
    start = time.perf_counter()
    if isinstance(model, TenLarge):
        emb = extract_ensemble_embeddings(model, puzzle)
    else:
        emb = extract_embeddings(model, puzzle)
    all_pairs_cm(emb, measure, "type2")
    elapsed = time.perf_counter() - start
    members = len(emb) if isinstance(emb, list) else 1
    return elapsed, members * 16 * puzzle.n_pieces ** 2


def _time_e2e_route(model: E2EModel, puzzle: Puzzle) -> float:
    """Time all 16N(N-1) type2 pair forwards (batched, scores materialized)."""
    from .cm import e2e_all_pairs

    start = time.perf_counter()
    e2e_all_pairs(model, puzzle, "type2")
    return time.perf_counter() - start


def run_bench(models: dict, sizes: list[int], piece_size: int, measure: str,
              threads: int, methods=BENCH_METHODS, memory_budget: float = 2e9,
              log=print) -> list[BenchRecord]:
    """Time each method at each puzzle size; verifies forward-pass counters."""
    records = []
    for n in sizes:
        # score matrix + distance buffers dominate the embedding route's footprint
        footprint = (4 * n) ** 2 * 12
        if footprint > memory_budget:
            log(f"skipping N={n}: estimated {footprint / 1e9:.1f} GB exceeds budget")
            continue
        puzzle = synthetic_puzzle(n, piece_size)
        for method in methods:
            model = models[method]
            _reset_counters(model)
            if method == "e2e":
                seconds = _time_e2e_route(model, puzzle)
                dist_evals = 0
            else:
                seconds, dist_evals = _time_embedding_route(model, puzzle, measure)
            counted = _counted_forwards(model)
            expected = expected_forward_passes(method, n)
            if counted != expected:
                raise RuntimeError(f"{method} at N={n}: counted {counted} forward "
                                   f"passes, expected {expected}")
            records.append(BenchRecord(n, method, seconds, counted, dist_evals, threads))
            log(f"N={n} {method}: {seconds:.3f}s ({counted} forwards)")
    return records


def plot_bench(records: list[BenchRecord], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for method in BENCH_METHODS:
        pts = sorted((r.n_pieces, r.seconds) for r in records if r.method == method)
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("puzzle pieces")
    ax.set_ylabel("seconds for all type2 pair scores")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
