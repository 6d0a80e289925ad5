"""Direct Markov-chain simulation of the walk, single and in ensembles.

Step ``k`` of walk ``stream`` uses the uniform ``fresh_s(stream, k)`` and
inverse-CDF sampling of the local kernel, which is the skew-product map in
refresh mode.  Ensembles are simulated in fixed-size chunks of walks, each
chunk vectorized over its walks; chunk results are reassembled by walk
index so the output does not depend on the number of workers.
"""
from __future__ import annotations

import csv
import gzip
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from . import prf
from .dynamics import (
    _cumulative,
    _locate_batch,
    build_partition,
    cylinder_interval,
    fresh_s,
    locate,
    orbit,
    SkewState,
)
from .environment import EnvironmentSpec, EnvironmentView, kernels_at_sites

__all__ = [
    "Trajectory",
    "WalkEnsemble",
    "EquivalenceReport",
    "quenched_step",
    "simulate_walk",
    "simulate_ensemble",
    "annealed_sample",
    "quenched_sample",
    "transition_probability",
    "equivalence_check",
    "ENUMERATION_LIMIT",
]

log = logging.getLogger(__name__)

CHUNK_SIZE = 1024
ENUMERATION_LIMIT = 10**6
MODES = ("quenched", "annealed")


@dataclass(eq=False)
class Trajectory:
    positions: np.ndarray
    env_seed: int
    walk_stream: int

    @property
    def n_steps(self) -> int:
        return len(self.positions) - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)


@dataclass(eq=False)
class WalkEnsemble:
    """Walks with their provenance.

    ``positions[j, r]`` is the position of walk ``j`` at step
    ``record_steps[r]``.  ``first_return[j]`` is the first ``k >= 1`` with
    ``X_k = 0`` (0 if the walk never returned within ``n_steps``); it is
    tracked at every step even when only some steps are recorded.
    """

    spec: EnvironmentSpec
    mode: str
    n_steps: int
    env_seeds: np.ndarray
    streams: np.ndarray
    record_steps: np.ndarray
    positions: np.ndarray
    first_return: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def n_walks(self) -> int:
        return len(self.streams)

    @property
    def dims(self) -> int:
        return self.spec.dims

    @property
    def full(self) -> bool:
        return len(self.record_steps) == self.n_steps + 1

    def at(self, n: int) -> np.ndarray:
        """Positions of all walks at step ``n``, shape ``(n_walks, d)``."""
        hit = np.flatnonzero(self.record_steps == n)
        if len(hit) == 0:
            raise KeyError(f"step {n} was not recorded")
        return self.positions[:, hit[0]]

    @property
    def final(self) -> np.ndarray:
        return self.at(self.n_steps)

    def trajectory(self, j: int) -> Trajectory:
        if not self.full:
            raise ValueError("trajectories need an ensemble recorded at every step")
        return Trajectory(self.positions[j], int(self.env_seeds[j]), int(self.streams[j]))

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(j) for j in range(self.n_walks)]

    def view(self, j: int) -> EnvironmentView:
        """The environment walk ``j`` moved in."""
        return EnvironmentView(self.spec.with_seed(int(self.env_seeds[j])))

    # -- export --------------------------------------------------------------

    def write_csv(self, fh: IO[str]) -> None:
        """CSV with header ``walk_id, step, x_1, ..., x_d``, ordered by walk then step."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["walk_id", "step"] + [f"x_{k + 1}" for k in range(self.dims)])
        for j in range(self.n_walks):
            for r, k in enumerate(self.record_steps):
                w.writerow([j, int(k)] + self.positions[j, r].tolist())

    def write_ndjson_gz(self, path) -> None:
        """Compressed NDJSON, one full record per walk."""
        with gzip.open(path, "wt") as fh:
            for j in range(self.n_walks):
                fh.write(json.dumps({
                    "walk_id": j,
                    "env_seed": int(self.env_seeds[j]),
                    "walk_stream": int(self.streams[j]),
                    "first_return": int(self.first_return[j]),
                    "steps": self.record_steps.tolist(),
                    "positions": self.positions[j].tolist(),
                }) + "\n")

    def metadata(self) -> dict:
        return {
            "environment": self.spec.to_dict(),
            "mode": self.mode,
            "n_steps": self.n_steps,
            "n_walks": self.n_walks,
            "record_steps": self.record_steps.tolist(),
        }

    @classmethod
    def read_csv(cls, fh: IO[str], spec: EnvironmentSpec, mode: str, n_steps: int) -> "WalkEnsemble":
        """Rebuild an ensemble from :meth:`write_csv` output.

        Seeds are re-derived from ``spec`` and ``mode``; first returns can
        only be recovered when every step was recorded.
        """
        rows = np.loadtxt(fh, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        walks = rows[:, 0]
        n_walks = int(walks.max()) + 1
        steps = rows[walks == 0, 1]
        pos = rows[:, 2:].reshape(n_walks, len(steps), spec.dims)
        env_seeds, streams = walk_seeds(spec, mode, n_walks)
        fr = np.zeros(n_walks, dtype=np.int64)
        if len(steps) == n_steps + 1:
            fr = _first_returns(pos)
        else:
            log.info("partial ensemble dump: first-return times not recoverable from positions")
        return cls(spec, mode, n_steps, env_seeds, streams, steps, pos, fr)


def _first_returns(pos: np.ndarray) -> np.ndarray:
    at0 = ~pos[:, 1:].any(axis=2)
    hit = at0.any(axis=1)
    return np.where(hit, at0.argmax(axis=1) + 1, 0)


# ---------------------------------------------------------------------------
# Single walks
# ---------------------------------------------------------------------------


def quenched_step(x, view: EnvironmentView, u: float) -> tuple[int, ...]:
    """Inverse-CDF sample of ``p(x, .)``: ``x + d_i`` with ``i`` the cell of ``u``."""
    x = np.asarray(x, dtype=np.int64)
    part = build_partition(view.kernel(x))
    i = locate(u, part)
    return tuple((x + np.array(view.lam.displacements[i - 1])).tolist())


def simulate_walk(view: EnvironmentView, n: int, stream: int) -> Trajectory:
    """Quenched walk of ``n`` steps from the view's origin, driven by ``stream``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    d = view.dims
    pos = np.zeros((n + 1, d), dtype=np.int64)
    off = np.array(view.origin_offset, dtype=np.int64)
    lam = view.lam.array
    x = np.zeros(d, dtype=np.int64)
    for k in range(n):
        q = kernels_at_sites(view.spec, (off + x)[None, :])
        i = int(_locate_batch(_cumulative(q), np.atleast_1d(fresh_s(stream, k)))[0])
        x = x + lam[i]
        pos[k + 1] = x
    return Trajectory(pos, view.spec.seed, int(stream))


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


def walk_seeds(spec: EnvironmentSpec, mode: str, n_walks: int) -> tuple[np.ndarray, np.ndarray]:
    """Environment seed and step stream for each walk.

    Annealed walk ``j`` gets its own environment ``PRF(seed, "env", j)``;
    quenched walks all share ``spec.seed``.  Streams are ``PRF(seed, "walk", j)``
    in both modes.
    """
    j = np.arange(n_walks, dtype=np.uint64)
    streams = prf.derive_seed(spec.seed, "walk", j)
    if mode == "annealed":
        env = prf.derive_seed(spec.seed, "env", j)
    elif mode == "quenched":
        env = np.full(n_walks, spec.seed, dtype=np.uint64)
    else:
        raise ValueError(f"mode must be one of {MODES}")
    return env, streams


def _simulate_chunk(spec_doc: dict, env_seeds: np.ndarray, streams: np.ndarray,
                    n_steps: int, record_steps: np.ndarray):
    spec = EnvironmentSpec.from_dict(spec_doc)
    b = len(streams)
    d = spec.dims
    lam = spec.jumps.array
    pos = np.zeros((b, d), dtype=np.int64)
    first = np.zeros(b, dtype=np.int64)
    rec = np.zeros((b, len(record_steps), d), dtype=np.int64)
    slot = {int(k): r for r, k in enumerate(record_steps)}
    seeds = None if spec.kind != "iid-appendix" else env_seeds
    for k in range(n_steps):
        q = kernels_at_sites(spec, pos, seeds)
        cell = _locate_batch(_cumulative(q), fresh_s(streams, k))
        pos += lam[cell]
        back = ~pos.any(axis=1) & (first == 0)
        first[back] = k + 1
        r = slot.get(k + 1)
        if r is not None:
            rec[:, r] = pos
    return rec, first


def simulate_ensemble(spec: EnvironmentSpec, mode: str, n_walks: int, n_steps: int,
                      record_steps: Sequence[int] | None = None, workers: int = 1,
                      chunk_size: int = CHUNK_SIZE) -> WalkEnsemble:
    """Simulate ``n_walks`` walks of ``n_steps`` steps in quenched or annealed mode.

    ``record_steps`` defaults to every step.  Results are identical for any
    ``workers`` and ``chunk_size``.
    """
    if n_walks < 1:
        raise ValueError("n_walks must be >= 1")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if record_steps is None:
        steps = np.arange(n_steps + 1)
    else:
        steps = np.unique(np.asarray(list(record_steps) + [0, n_steps], dtype=np.int64))
        if steps.min() < 0 or steps.max() > n_steps:
            raise ValueError("record_steps must lie in 0..n_steps")
    env_seeds, streams = walk_seeds(spec, mode, n_walks)
    doc = spec.to_dict()
    bounds = [(lo, min(lo + chunk_size, n_walks)) for lo in range(0, n_walks, chunk_size)]
    args = [(doc, env_seeds[lo:hi], streams[lo:hi], n_steps, steps) for lo, hi in bounds]
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, *zip(*args)))
    else:
        parts = [_simulate_chunk(*a) for a in args]
    rec = np.concatenate([p[0] for p in parts])
    first = np.concatenate([p[1] for p in parts])
    log.debug("simulated %d %s walks of %d steps", n_walks, mode, n_steps)
    return WalkEnsemble(spec, mode, n_steps, env_seeds, streams, steps, rec, first)


def annealed_sample(spec: EnvironmentSpec, n_walks: int, n_steps: int, **kw) -> WalkEnsemble:
    """Walks under the annealed law: a fresh environment per walk."""
    return simulate_ensemble(spec, "annealed", n_walks, n_steps, **kw)


def quenched_sample(spec: EnvironmentSpec, n_walks: int, n_steps: int, **kw) -> WalkEnsemble:
    """Walks in the single environment ``spec``."""
    return simulate_ensemble(spec, "quenched", n_walks, n_steps, **kw)


# ---------------------------------------------------------------------------
# Representation equivalence
# ---------------------------------------------------------------------------


def transition_probability(view: EnvironmentView, x, y) -> float:
    """Markov transition probability ``p(x, y)`` in the view's coordinates."""
    e = tuple((np.asarray(y) - np.asarray(x)).tolist())
    try:
        i = view.lam.index(e)
    except ValueError:
        return 0.0
    return float(view.kernel(x)[i])


@dataclass
class EquivalenceReport:
    n: int
    n_cylinders: int
    max_discrepancy: float
    total_measure: float
    tiling_gap: float
    orbit_mismatches: int

    @property
    def passed(self) -> bool:
        return (self.max_discrepancy <= 1e-12 and abs(self.total_measure - 1.0) <= 1e-9
                and self.orbit_mismatches == 0)

    def to_dict(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


def equivalence_check(view: EnvironmentView, n: int) -> EquivalenceReport:
    """Compare every length-``n`` cylinder interval with its Markov path probability.

    The interval comes from pulling ``[0, 1)`` back through the fiber maps;
    the path probability is the product of ``p(x_k, x_{k+1})`` along the
    walk the multi-index encodes.  As a third witness, the exact orbit of
    each nonempty interval's midpoint must reproduce the multi-index.
    """
    big_n = len(view.lam)
    if n < 1:
        raise ValueError("n must be >= 1")
    if big_n**n > ENUMERATION_LIMIT:
        raise ValueError(f"{big_n}**{n} cylinders exceed the enumeration limit {ENUMERATION_LIMIT}")
    lam = view.lam.array
    memo: dict[tuple, np.ndarray] = {}

    def p(x, y):
        key = tuple(x)
        if key not in memo:
            memo[key] = view.kernel(np.array(key))
        e = tuple(np.subtract(y, x).tolist())
        return float(memo[key][view.lam.index(e)]) if e in view.lam.displacements else 0.0

    worst = 0.0
    total = 0.0
    intervals = []
    mismatches = 0
    for idx in itertools.product(range(1, big_n + 1), repeat=n):
        x = np.zeros(view.dims, dtype=np.int64)
        prob = 1.0
        for i in idx:
            y = x + lam[i - 1]
            prob *= p(x, y)
            x = y
        lo, hi = cylinder_interval(view, idx)
        worst = max(worst, abs((hi - lo) - prob))
        total += prob
        if hi > lo:
            intervals.append((lo, hi))
            recs = orbit(SkewState(0.5 * (lo + hi), view), n, refresh=False)
            if tuple(r.cell for r in recs) != idx:
                mismatches += 1
    intervals.sort()
    gap = abs(intervals[0][0]) + abs(intervals[-1][1] - 1.0)
    for (_, h0), (l1, _) in zip(intervals, intervals[1:]):
        gap = max(gap, abs(l1 - h0))
    return EquivalenceReport(n, big_n**n, worst, total, gap, mismatches)
