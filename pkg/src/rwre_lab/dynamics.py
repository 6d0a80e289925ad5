"""The random walk seen from the particle, as a skew-product map.

A phase point is ``(s, omega)`` with ``s`` in ``[0, 1)``.  The kernel at the
particle's site cuts ``[0, 1)`` into cells ``[a_{i-1}, a_i)`` of lengths
``q_i``; the cell holding ``s`` selects the jump ``d_i``, ``s`` is blown up
affinely onto ``[0, 1)`` and the environment is re-centred at the new site.

Cell indices in the public API are 1-based, matching cylinder multi-indices
``(i_0, ..., i_{n-1})`` with entries in ``1..N``.

Long exact orbits lose the information stored in ``s`` after roughly 52
expansions.  Orbit functions therefore switch to *refresh* mode for more
than :data:`EXACT_ORBIT_LIMIT` steps: after the first step, ``s_k`` is a fresh
uniform keyed by ``(stream, k)``, which has the same law.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from . import prf
from .environment import EPS_BISTO, EnvironmentView, kernels_at_sites, shift

__all__ = [
    "EXACT_ORBIT_LIMIT",
    "FiberPartition",
    "SkewState",
    "build_partition",
    "locate",
    "displacement",
    "fiber_map",
    "step",
    "orbit",
    "cocycle",
    "cylinder_measure",
    "cylinder_interval",
    "info_rate",
    "info_rates",
    "preimage_lengths",
    "fresh_s",
    "write_orbit_ndjson",
]

EXACT_ORBIT_LIMIT = 40
_ONE_MINUS = math.nextafter(1.0, 0.0)
_TAG_STEP = prf.tag("step")


@dataclass(frozen=True, eq=False)
class FiberPartition:
    """Endpoints ``a_0 = 0 <= a_1 <= ... <= a_N = 1`` of the fiber cells."""

    endpoints: np.ndarray

    @property
    def cell_count(self) -> int:
        return len(self.endpoints) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.endpoints)

    def cell(self, i: int) -> tuple[float, float]:
        """Cell ``i`` (1-based) as ``(left, right)``."""
        return float(self.endpoints[i - 1]), float(self.endpoints[i])


def _cumulative(q: np.ndarray) -> np.ndarray:
    """Renormalized cumulative sums along the last axis; last column exactly 1."""
    a = np.cumsum(q, axis=-1)
    a = a / a[..., -1:]
    a[..., -1] = 1.0
    return a


def build_partition(q, eps: float = EPS_BISTO) -> FiberPartition:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or len(q) == 0:
        raise ValueError("q must be a nonempty vector")
    if (q < 0).any():
        raise ValueError("probability vector has a negative entry")
    if abs(q.sum() - 1.0) > eps:
        raise ValueError(f"probability vector sums to {q.sum()!r}, not 1")
    return FiberPartition(np.concatenate([[0.0], _cumulative(q)]))


def _locate_batch(a: np.ndarray, s: np.ndarray) -> np.ndarray:
    """0-based cell index for each row: number of inner endpoints ``<= s``."""
    return (a[..., :-1] <= s[..., None]).sum(axis=-1)


def _check_s(s: float) -> None:
    if not 0.0 <= s < 1.0:
        raise ValueError(f"s must lie in [0, 1), got {s!r}")


def locate(s: float, part: FiberPartition) -> int:
    """The unique 1-based ``i`` with ``a_{i-1} <= s < a_i``; empty cells never match."""
    _check_s(s)
    return int(np.searchsorted(part.endpoints[1:-1], s, side="right")) + 1


def _affine(s, left, width):
    t = (s - left) / width
    return np.minimum(t, _ONE_MINUS)


def displacement(s: float, view: EnvironmentView) -> tuple[int, ...]:
    part = build_partition(view.kernel())
    return view.lam.displacements[locate(s, part) - 1]


def fiber_map(s: float, view: EnvironmentView) -> float:
    """Affine blow-up of the cell holding ``s`` onto ``[0, 1)``."""
    part = build_partition(view.kernel())
    i = locate(s, part)
    left, right = part.cell(i)
    return float(_affine(s, left, right - left))


@dataclass(frozen=True)
class SkewState:
    """Phase point ``(s, omega)``; the view offset is the walker position."""

    s: float
    view: EnvironmentView
    step_count: int = 0

    def __post_init__(self):
        _check_s(self.s)

    @property
    def position(self) -> tuple[int, ...]:
        return self.view.origin_offset


def step(state: SkewState) -> SkewState:
    """One application of the skew-product map."""
    part = build_partition(state.view.kernel())
    i = locate(state.s, part)
    left, right = part.cell(i)
    s_next = float(_affine(state.s, left, right - left))
    jump = state.view.lam.displacements[i - 1]
    return SkewState(s_next, shift(state.view, jump), state.step_count + 1)


def fresh_s(stream, k) -> np.ndarray:
    """Refresh-mode internal variable ``s_k`` for walk ``stream``."""
    return prf.uniform(stream, _TAG_STEP, k)


@dataclass
class OrbitRecord:
    k: int
    s: float
    cell: int
    displacement: tuple[int, ...]
    position: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"k": self.k, "s": self.s, "cell": self.cell,
                "displacement": list(self.displacement), "position": list(self.position)}


def orbit(state0: SkewState, n: int, refresh: bool | None = None,
          stream: int = 0) -> list[OrbitRecord]:
    """``n`` steps from ``state0``; one record per step (position before the jump)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if refresh is None:
        refresh = n > EXACT_ORBIT_LIMIT
    out = []
    st = state0
    for k in range(n):
        part = build_partition(st.view.kernel())
        i = locate(st.s, part)
        d = st.view.lam.displacements[i - 1]
        out.append(OrbitRecord(st.step_count, st.s, i, d, st.position))
        st = step(st)
        if refresh:
            st = SkewState(float(fresh_s(stream, st.step_count)), st.view, st.step_count)
    return out


def cocycle(state0: SkewState, n: int, refresh: bool | None = None,
            stream: int = 0) -> np.ndarray:
    """Walk positions ``X_0 = 0, X_1, ..., X_n`` relative to the starting view, shape ``(n+1, d)``."""
    recs = orbit(state0, n, refresh, stream)
    x = np.zeros((n + 1, state0.view.dims), dtype=np.int64)
    for k, r in enumerate(recs):
        x[k + 1] = x[k] + np.array(r.displacement)
    return x


def write_orbit_ndjson(records: Iterable[OrbitRecord], fh: IO[str]) -> None:
    for r in records:
        fh.write(json.dumps(r.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# Cylinders
# ---------------------------------------------------------------------------


def _path_sites(view: EnvironmentView, idx: Sequence[int]) -> np.ndarray:
    lam = view.lam.array
    steps = lam[np.asarray(idx, dtype=np.int64) - 1]
    rel = np.vstack([np.zeros((1, view.dims), dtype=np.int64), np.cumsum(steps, axis=0)])
    return rel[:-1]


def _check_index(view: EnvironmentView, idx: Sequence[int]) -> None:
    if len(idx) == 0:
        raise ValueError("cylinder index must be nonempty")
    n = len(view.lam)
    if any(not 1 <= i <= n for i in idx):
        raise ValueError(f"cylinder index entries must lie in 1..{n}")


def cylinder_measure(view: EnvironmentView, idx: Sequence[int]) -> float:
    """Lebesgue measure ``prod_k q_{i_k}(omega_k)`` of the cylinder interval."""
    _check_index(view, idx)
    q = view.kernels(_path_sites(view, idx))
    out = 1.0
    for k, i in enumerate(idx):
        out *= q[k, i - 1]
        if out == 0.0:
            return 0.0
    return float(out)


def cylinder_interval(view: EnvironmentView, idx: Sequence[int]) -> tuple[float, float]:
    """The interval of ``s`` whose first ``n`` displacements are ``d_{i_0}, ..., d_{i_{n-1}}``.

    Built by pulling ``[0, 1)`` back through the affine branches from the
    last step to the first.  Empty cylinders come back as ``(lo, lo)``.
    """
    _check_index(view, idx)
    q = view.kernels(_path_sites(view, idx))
    a = _cumulative(q)
    lo, hi = 0.0, 1.0
    for k in range(len(idx) - 1, -1, -1):
        c = idx[k] - 1
        left = a[k, c - 1] if c > 0 else 0.0
        width = a[k, c] - left
        lo, hi = left + width * lo, left + width * hi
    return lo, hi


# ---------------------------------------------------------------------------
# Information rate (cylinder decay)
# ---------------------------------------------------------------------------


def advance(spec, positions: np.ndarray, s: np.ndarray, seeds=None):
    """Vectorized skew-product step for a batch of walkers.

    Returns ``(cell, q_cell, jump, s_next)`` with 0-based ``cell``.
    """
    q = kernels_at_sites(spec, positions, seeds)
    a = _cumulative(q)
    cell = _locate_batch(a, s)
    rows = np.arange(len(s))
    left = np.where(cell > 0, a[rows, np.maximum(cell - 1, 0)], 0.0)
    width = a[rows, cell] - left
    s_next = _affine(s, left, width)
    return cell, q[rows, cell], spec.jumps.array[cell], s_next


def info_rates(view: EnvironmentView, s0, n: int, streams=None,
               refresh: bool | None = None) -> np.ndarray:
    """Batched :func:`info_rate` for starting points ``s0`` in one environment."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if refresh is None:
        refresh = n > EXACT_ORBIT_LIMIT
    s = np.array(s0, dtype=np.float64).reshape(-1)
    b = len(s)
    streams = np.arange(b, dtype=np.uint64) if streams is None else np.asarray(streams, np.uint64)
    pos = np.broadcast_to(np.array(view.origin_offset, dtype=np.int64), (b, view.dims)).copy()
    total = np.zeros(b)
    for k in range(n):
        _, qc, jump, s = advance(view.spec, pos, s)
        total -= np.log(qc)
        pos += jump
        if refresh:
            s = fresh_s(streams, k + 1)
    return total / n


def info_rate(state0: SkewState, n: int, refresh: bool | None = None, stream: int = 0) -> float:
    """Average ``-log q`` along the orbit: ``-(1/n) log`` of the realized cylinder's measure."""
    return float(info_rates(state0.view, [state0.s], n, [stream], refresh)[0])


def preimage_lengths(view: EnvironmentView, b: float, c: float) -> np.ndarray:
    """Per-cell length of the preimage of ``[b, c)`` under the fiber map.

    Cell ``i`` contributes ``[a_{i-1} + w_i b, a_{i-1} + w_i c)`` of length
    ``w_i (c - b)``; the lengths sum to ``c - b`` because the cells tile
    ``[0, 1)``.
    """
    if not 0.0 <= b <= c <= 1.0:
        raise ValueError("need 0 <= b <= c <= 1")
    part = build_partition(view.kernel())
    lo = part.endpoints[:-1] + part.widths * b
    hi = part.endpoints[:-1] + part.widths * c
    return hi - lo
