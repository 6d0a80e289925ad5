"""Bistochastic random environments on Z^d.

An environment is never stored.  The kernel at a lattice site is
recomputed on demand from the :class:`EnvironmentSpec` and the absolute
site, so a shifted view is just an integer offset and shifting is exact.

Three kinds are supported:

``simple-symmetric``
    uniform nearest-neighbour kernel, the same at every site.
``explicit-periodic``
    a table of kernels on a fundamental domain, tiled periodically.
``iid-appendix``
    i.i.d. random bistochastic matrices ``omega[zeta]`` indexed by a finite
    base set ``lambda0``, averaged over the ``len(lambda0)`` blocks that
    cover a site and then balanced, ``p(x, x+e) = (o(x, x+e) + o(x, x-e))/2``.
    The block average ``o`` is bistochastic; the balanced kernel has zero
    local drift exactly, but its column sums are *not* 1 in general, which
    :func:`validate_environment` reports.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels, prf

__all__ = [
    "EPS_BISTO",
    "EPS_DRIFT",
    "LATTICE_LIMIT",
    "KINDS",
    "SAMPLERS",
    "EnvironmentError",
    "SinkhornError",
    "LatticeRangeError",
    "JumpSet",
    "LocalMatrix",
    "EnvironmentSpec",
    "EnvironmentView",
    "ValidationReport",
    "default_lambda0",
    "permutation_list",
    "sinkhorn_normalize",
    "birkhoff_combine",
    "sample_local_matrix",
    "kernel_at",
    "kernels_at_sites",
    "shift",
    "validate_environment",
]

EPS_BISTO = 1e-10
EPS_DRIFT = 1e-10
LATTICE_LIMIT = 2**40

KINDS = ("explicit-periodic", "iid-appendix", "simple-symmetric")
SAMPLERS = ("sinkhorn", "birkhoff")

SINKHORN_TOL = 1e-12
SINKHORN_MAX_ITER = 10_000
RAW_LOW, RAW_HIGH = 0.1, 1.0
MAX_FULL_PERMUTATION_N0 = 6

_TAG_OMEGA = prf.tag("omega")


class EnvironmentError(ValueError):
    """Invalid environment description or unsupported request."""


class SinkhornError(RuntimeError):
    """Sinkhorn scaling failed to reach the requested tolerance."""


class LatticeRangeError(ValueError):
    """Lattice coordinate outside the addressable range ``|x_k| <= 2**40``."""


def _check_range(a: np.ndarray) -> None:
    if a.size and np.abs(a).max() > LATTICE_LIMIT:
        raise LatticeRangeError(f"lattice coordinate beyond +-2**40: {np.abs(a).max()}")


# ---------------------------------------------------------------------------
# Jump sets and local matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpSet:
    """Ordered finite set of distinct lattice displacements ``d_1..d_N``."""

    dims: int
    displacements: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        disp = tuple(tuple(int(c) for c in v) for v in self.displacements)
        object.__setattr__(self, "displacements", disp)
        if self.dims < 1:
            raise EnvironmentError("dims must be positive")
        if len(disp) < 2:
            raise EnvironmentError("a jump set needs at least two displacements")
        if any(len(v) != self.dims for v in disp):
            raise EnvironmentError("displacement of wrong dimension")
        if len(set(disp)) != len(disp):
            raise EnvironmentError("displacements must be distinct")

    @classmethod
    def from_vectors(cls, vectors) -> "JumpSet":
        vecs = [tuple(int(c) for c in v) for v in vectors]
        return cls(len(vecs[0]), tuple(vecs))

    def __len__(self) -> int:
        return len(self.displacements)

    def __iter__(self):
        return iter(self.displacements)

    def index(self, v) -> int:
        return self.displacements.index(tuple(int(c) for c in v))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.displacements, dtype=np.int64)

    def is_symmetric(self) -> bool:
        s = set(self.displacements)
        return all(tuple(-c for c in v) in s for v in s)


@dataclass(frozen=True, eq=False)
class LocalMatrix:
    """Square nonnegative matrix indexed by a base set of lattice vectors."""

    base_set: tuple[tuple[int, ...], ...]
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        object.__setattr__(self, "entries", e)
        n = len(self.base_set)
        if e.shape != (n, n):
            raise EnvironmentError(f"entries shape {e.shape} does not match base set of size {n}")
        if (e < 0).any():
            raise EnvironmentError("local matrix entries must be nonnegative")

    def row_deviation(self) -> float:
        return float(np.abs(self.entries.sum(axis=1) - 1.0).max())

    def column_deviation(self) -> float:
        return float(np.abs(self.entries.sum(axis=0) - 1.0).max())

    def is_bistochastic(self, tol: float = EPS_BISTO) -> bool:
        return (
            bool((self.entries >= 0).all())
            and self.row_deviation() <= tol
            and self.column_deviation() <= tol
        )


def default_lambda0(dims: int, n0: int) -> list[list[int]]:
    """A base set of ``n0`` points near the origin.

    In one dimension this is ``{0, 1, ..., n0-1}``; in higher dimensions the
    origin, then the unit vectors, then sums of pairs of unit vectors.
    """
    if n0 < 2:
        raise EnvironmentError("lambda0 needs at least two points")
    if dims == 1:
        return [[k] for k in range(n0)]
    pts = [tuple([0] * dims)]
    eye = [tuple(int(i == j) for j in range(dims)) for i in range(dims)]
    pts += eye
    for a, b in itertools.combinations(range(dims), 2):
        pts.append(tuple(x + y for x, y in zip(eye[a], eye[b])))
    if n0 > len(pts):
        raise EnvironmentError(f"no default lambda0 with {n0} points in dimension {dims}")
    return [list(p) for p in pts[:n0]]


def permutation_list(n0: int, num_perms: int | None = None) -> list[tuple[int, ...]]:
    """Explicit permutation list for the Birkhoff sampler.

    The ``n0`` cyclic shifts come first (together they cover every matrix
    entry), followed by the remaining permutations in lexicographic order.
    """
    shifts = [tuple((x + k) % n0 for x in range(n0)) for k in range(n0)]
    if num_perms is None:
        if n0 > MAX_FULL_PERMUTATION_N0:
            raise EnvironmentError(
                f"full permutation enumeration is capped at N0 <= {MAX_FULL_PERMUTATION_N0}; "
                "pass num_perms"
            )
        seen = set(shifts)
        rest = [p for p in itertools.permutations(range(n0)) if p not in seen]
        return shifts + rest
    if num_perms < 1:
        raise EnvironmentError("num_perms must be >= 1")
    out = list(shifts[:num_perms])
    if num_perms > n0:
        seen = set(shifts)
        for p in itertools.permutations(range(n0)):
            if len(out) == num_perms:
                break
            if p not in seen:
                out.append(p)
        if len(out) < num_perms:
            raise EnvironmentError(f"only {len(out)} permutations of {n0} elements exist")
    return out


# ---------------------------------------------------------------------------
# Bistochastic matrix construction
# ---------------------------------------------------------------------------


def sinkhorn_normalize(raw, tol: float = SINKHORN_TOL, max_iter: int = SINKHORN_MAX_ITER,
                       base_set=None) -> LocalMatrix:
    """Alternately rescale rows and columns of a positive matrix to unit sums.

    Iterates until the largest deviation of any row or column sum from 1 is
    below ``tol``.  Raises :class:`SinkhornError` after ``max_iter`` sweeps and
    ``ValueError`` for a matrix with a nonpositive entry.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ValueError("raw must be a square matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not (raw > 0).all():
        raise ValueError("Sinkhorn scaling requires strictly positive entries")
    m = raw.copy()
    if _kernels.sinkhorn_inplace(m, tol, max_iter) < 0:
        raise SinkhornError(f"Sinkhorn did not reach tol={tol} within {max_iter} sweeps")
    if base_set is None:
        base_set = tuple((k,) for k in range(raw.shape[0]))
    return LocalMatrix(tuple(map(tuple, base_set)), m)


def _permutation_matrices(perms: Sequence[Sequence[int]], n0: int) -> np.ndarray:
    out = np.zeros((len(perms), n0, n0))
    for k, p in enumerate(perms):
        if sorted(p) != list(range(n0)):
            raise ValueError(f"not a permutation of range({n0}): {p}")
        out[k, np.arange(n0), list(p)] = 1.0
    return out


def _combine_batch(weights: np.ndarray, pmats: np.ndarray) -> np.ndarray:
    m = weights[..., 0, None, None] * pmats[0]
    for k in range(1, pmats.shape[0]):
        m = m + weights[..., k, None, None] * pmats[k]
    return m


def birkhoff_combine(weights, perms, require_coverage: bool = False,
                     base_set=None, tol: float = EPS_BISTO) -> LocalMatrix:
    """Convex combination ``sum_k weights[k] * P(perms[k])`` of permutation matrices.

    ``P(p)`` has ones at ``(x, p[x])``.  With ``require_coverage`` every
    matrix entry must be hit by some permutation, which makes the result
    strictly positive whenever all weights are.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) != len(perms) or len(w) == 0:
        raise ValueError("weights and perms must be nonempty and of equal length")
    if (w <= 0).any() or abs(w.sum() - 1.0) > tol:
        raise ValueError("weights must be a positive probability vector")
    n0 = len(perms[0])
    pm = _permutation_matrices(perms, n0)
    if require_coverage and not (pm.sum(axis=0) > 0).all():
        raise ValueError("permutation list does not cover every entry")
    if base_set is None:
        base_set = tuple((k,) for k in range(n0))
    return LocalMatrix(tuple(map(tuple, base_set)), _combine_batch(w, pm))


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Structure:
    lam: JumpSet
    lambda0: np.ndarray | None = None
    # iid-appendix: target column in lam of each (a, b) pair and of -e
    pair_index: np.ndarray | None = None
    neg_index: np.ndarray | None = None
    perm_mats: np.ndarray | None = None
    # explicit-periodic
    period: np.ndarray | None = None
    table: np.ndarray | None = None


@dataclass(frozen=True)
class EnvironmentSpec:
    """Everything needed to realize an environment; a pure value.

    ``sampler_params`` holds ``tol`` and ``max_iter`` for the Sinkhorn
    sampler, or ``num_perms`` (and optionally ``strict_positive``) for the
    Birkhoff sampler.  ``table`` is only used by ``explicit-periodic`` and
    has keys ``period``, ``lambda`` and ``kernels`` (row-major over the
    fundamental domain, first coordinate slowest).  Without ``lambda0`` the
    iid base set is the origin plus the unit vectors.
    """

    kind: str
    dims: int
    seed: int = 0
    lambda0: tuple[tuple[int, ...], ...] | None = None
    sampler: str = "sinkhorn"
    sampler_params: Mapping[str, Any] = field(default_factory=dict)
    table: Mapping[str, Any] | None = None
    _structure: _Structure = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EnvironmentError(f"unsupported environment kind {self.kind!r}")
        if not isinstance(self.dims, int) or self.dims < 1:
            raise EnvironmentError("dims must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise EnvironmentError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))
        if self.sampler not in SAMPLERS:
            raise EnvironmentError(f"unknown sampler {self.sampler!r}")
        object.__setattr__(self, "sampler_params", dict(self.sampler_params or {}))
        if self.lambda0 is not None:
            object.__setattr__(self, "lambda0", tuple(tuple(int(c) for c in v) for v in self.lambda0))
        object.__setattr__(self, "_structure", self._build_structure())
        if self.kind == "iid-appendix":
            object.__setattr__(self, "lambda0", tuple(map(tuple, self._structure.lambda0.tolist())))

    # -- construction helpers ------------------------------------------------

    def _build_structure(self) -> _Structure:
        d = self.dims
        if self.kind == "simple-symmetric":
            disp = []
            for k in range(d):
                for sgn in (-1, 1):
                    disp.append(tuple(sgn * int(j == k) for j in range(d)))
            return _Structure(JumpSet(d, tuple(disp)))
        if self.kind == "explicit-periodic":
            return self._periodic_structure()
        lam0 = self.lambda0 if self.lambda0 is not None else default_lambda0(d, d + 1)
        lam0 = np.array(lam0, dtype=np.int64)
        if lam0.ndim != 2 or lam0.shape[1] != d:
            raise EnvironmentError("lambda0 vectors must have length dims")
        n0 = lam0.shape[0]
        if n0 < 2 or len({tuple(v) for v in lam0.tolist()}) != n0:
            raise EnvironmentError("lambda0 needs at least two distinct points")
        diffs = sorted({tuple((lam0[b] - lam0[a]).tolist()) for a in range(n0) for b in range(n0)})
        lam = JumpSet(d, tuple(diffs))
        pos = {v: i for i, v in enumerate(diffs)}
        pair = np.array([[pos[tuple((lam0[b] - lam0[a]).tolist())] for b in range(n0)]
                         for a in range(n0)])
        neg = np.array([pos[tuple(-c for c in v)] for v in diffs])
        perm_mats = None
        if self.sampler == "birkhoff":
            perms = permutation_list(n0, self.sampler_params.get("num_perms"))
            perm_mats = _permutation_matrices(perms, n0)
            if self.sampler_params.get("strict_positive", True) and not (perm_mats.sum(0) > 0).all():
                raise EnvironmentError("permutation list does not cover every entry")
        else:
            extra = set(self.sampler_params) - {"tol", "max_iter"}
            if extra:
                raise EnvironmentError(f"unknown sinkhorn parameters {sorted(extra)}")
        return _Structure(lam, lam0, pair, neg, perm_mats)

    def _periodic_structure(self) -> _Structure:
        t = self.table
        if not t:
            raise EnvironmentError("explicit-periodic requires a 'table'")
        try:
            period = np.array(t["period"], dtype=np.int64)
            lam = JumpSet.from_vectors(t["lambda"])
            kernels = np.array(t["kernels"], dtype=np.float64)
        except KeyError as exc:
            raise EnvironmentError(f"table is missing key {exc}") from None
        if period.shape != (self.dims,) or (period < 1).any():
            raise EnvironmentError("table.period must list one positive period per dimension")
        if lam.dims != self.dims:
            raise EnvironmentError("table.lambda has the wrong dimension")
        if kernels.shape != (int(np.prod(period)), len(lam)):
            raise EnvironmentError(
                f"table.kernels must have shape ({int(np.prod(period))}, {len(lam)})"
            )
        if (kernels < 0).any():
            raise EnvironmentError("table.kernels must be nonnegative")
        if np.abs(kernels.sum(axis=1) - 1.0).max() > EPS_BISTO:
            raise EnvironmentError("each row of table.kernels must sum to 1")
        object.__setattr__(self, "table", {"period": period.tolist(),
                                           "lambda": [list(v) for v in lam],
                                           "kernels": kernels.tolist()})
        return _Structure(lam, period=period, table=kernels)

    # -- accessors -----------------------------------------------------------

    @property
    def jumps(self) -> JumpSet:
        """The effective jump set of the built kernel."""
        return self._structure.lam

    @property
    def n0(self) -> int:
        return 0 if self._structure.lambda0 is None else len(self._structure.lambda0)

    @property
    def tol(self) -> float:
        return float(self.sampler_params.get("tol", SINKHORN_TOL))

    @property
    def max_iter(self) -> int:
        return int(self.sampler_params.get("max_iter", SINKHORN_MAX_ITER))

    def with_seed(self, seed: int) -> "EnvironmentSpec":
        return EnvironmentSpec(self.kind, self.dims, int(seed), self.lambda0, self.sampler,
                               self.sampler_params, self.table)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "seed": self.seed, "dims": self.dims}
        if self.kind == "iid-appendix":
            out["lambda0"] = [list(v) for v in self._structure.lambda0.tolist()]
            out["sampler"] = self.sampler
            out["sampler_params"] = dict(self.sampler_params)
        if self.kind == "explicit-periodic":
            out["table"] = self.table
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EnvironmentSpec":
        known = {"kind", "seed", "dims", "lambda0", "sampler", "sampler_params", "table"}
        unknown = set(doc) - known
        if unknown:
            raise EnvironmentError(f"unknown environment keys {sorted(unknown)}")
        for key in ("kind", "dims"):
            if key not in doc:
                raise EnvironmentError(f"environment is missing {key!r}")
        lam0 = doc.get("lambda0")
        return cls(
            kind=doc["kind"],
            dims=doc["dims"],
            seed=doc.get("seed", 0),
            lambda0=None if lam0 is None else tuple(tuple(v) for v in lam0),
            sampler=doc.get("sampler", "sinkhorn"),
            sampler_params=doc.get("sampler_params") or {},
            table=doc.get("table"),
        )

    @classmethod
    def from_json(cls, text: str) -> "EnvironmentSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Local matrices and kernels, batched over sites
# ---------------------------------------------------------------------------


def _sampler_args(spec: EnvironmentSpec) -> tuple:
    st = spec._structure
    code = _kernels.SINKHORN if spec.sampler == "sinkhorn" else _kernels.BIRKHOFF
    pm = st.perm_mats if st.perm_mats is not None else np.zeros((1, 1, 1))
    return code, RAW_LOW, RAW_HIGH, spec.tol, spec.max_iter, pm


def _seed_vector(spec: EnvironmentSpec, seeds, n: int) -> np.ndarray:
    if seeds is None:
        return np.full(n, spec.seed, dtype=np.uint64)
    s = np.asarray(seeds, dtype=np.uint64).reshape(-1)
    return np.ascontiguousarray(np.broadcast_to(s, (n,)))


def local_matrices(spec: EnvironmentSpec, zetas, seeds=None) -> np.ndarray:
    """The realized ``omega[zeta]`` for each row of ``zetas``, shape ``(B, N0, N0)``."""
    if spec.kind != "iid-appendix":
        raise EnvironmentError(f"local matrices exist only for iid-appendix, not {spec.kind!r}")
    z = np.ascontiguousarray(np.asarray(zetas, dtype=np.int64).reshape(-1, spec.dims))
    n0 = spec.n0
    out, bad = _kernels.local_matrices(_seed_vector(spec, seeds, len(z)), z, np.uint64(_TAG_OMEGA),
                                       n0, *_sampler_args(spec))
    if bad >= 0:
        raise SinkhornError(f"Sinkhorn did not converge for local matrix at {z[bad].tolist()}")
    return out


def sample_local_matrix(spec: EnvironmentSpec, site) -> LocalMatrix:
    """The local bistochastic matrix ``omega[site]`` of an iid-appendix environment.

    A pure function of ``(spec.seed, site)``; distinct sites use disjoint
    pseudorandom keys and are therefore independent draws.
    """
    site = np.asarray(site, dtype=np.int64).reshape(1, spec.dims)
    _check_range(site)
    m = local_matrices(spec, site)[0]
    return LocalMatrix(tuple(map(tuple, spec._structure.lambda0.tolist())), m)


def kernels_at_sites(spec: EnvironmentSpec, sites, seeds=None) -> np.ndarray:
    """Kernels ``q[b, i] = p(x_b, x_b + d_i)`` at absolute sites, shape ``(B, N)``.

    ``seeds`` optionally overrides ``spec.seed`` per row, which is how an
    annealed ensemble evaluates many environments in one batch.
    """
    x = np.asarray(sites, dtype=np.int64).reshape(-1, spec.dims)
    _check_range(x)
    st = spec._structure
    b = x.shape[0]
    n = len(st.lam)
    if spec.kind == "simple-symmetric":
        return np.full((b, n), 1.0 / n)
    if spec.kind == "explicit-periodic":
        cell = np.mod(x, st.period)
        flat = np.ravel_multi_index(tuple(cell.T), tuple(st.period))
        return st.table[flat].copy()
    out, bad = _kernels.iid_kernels(
        _seed_vector(spec, seeds, b), np.ascontiguousarray(x), np.uint64(_TAG_OMEGA),
        st.lambda0, st.pair_index, st.neg_index, n, *_sampler_args(spec))
    if bad >= 0:
        raise SinkhornError(f"Sinkhorn did not converge near site {x[bad].tolist()}")
    return out


# ---------------------------------------------------------------------------
# Views
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvironmentView:
    """An environment seen from ``origin_offset``: realizes the translate ``tau_z omega``."""

    spec: EnvironmentSpec
    origin_offset: tuple[int, ...] | None = None

    def __post_init__(self):
        off = self.origin_offset
        off = (0,) * self.spec.dims if off is None else tuple(int(c) for c in off)
        if len(off) != self.spec.dims:
            raise EnvironmentError("origin_offset has the wrong dimension")
        _check_range(np.array(off, dtype=np.int64))
        object.__setattr__(self, "origin_offset", off)

    @property
    def lam(self) -> JumpSet:
        return self.spec.jumps

    @property
    def dims(self) -> int:
        return self.spec.dims

    def kernel(self, x=None) -> np.ndarray:
        return kernel_at(self, x)

    def kernels(self, xs) -> np.ndarray:
        """Batched :func:`kernel_at` over rows of ``xs`` (relative coordinates)."""
        xs = np.asarray(xs, dtype=np.int64).reshape(-1, self.dims)
        return kernels_at_sites(self.spec, xs + np.array(self.origin_offset, dtype=np.int64))

    def shift(self, z) -> "EnvironmentView":
        return shift(self, z)


def kernel_at(view: EnvironmentView, x=None) -> np.ndarray:
    """Probability vector ``(q_1..q_N)`` with ``q_i = p(x, x + d_i)`` in ``view``."""
    x = np.zeros(view.dims, dtype=np.int64) if x is None else np.asarray(x, dtype=np.int64)
    return view.kernels(x.reshape(1, view.dims))[0]


def shift(view: EnvironmentView, z) -> EnvironmentView:
    """The translated view ``tau_z``: ``kernel_at(shift(v, z), x) == kernel_at(v, x + z)``."""
    z = np.asarray(z, dtype=np.int64).reshape(view.dims)
    off = np.array(view.origin_offset, dtype=np.int64) + z
    return EnvironmentView(view.spec, tuple(off.tolist()))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Per-site diagnostics of the environment hypotheses."""

    sites: np.ndarray
    row_deviation: np.ndarray
    column_deviation: np.ndarray
    drift: np.ndarray
    min_entry: np.ndarray
    min_positive_entry: np.ndarray
    eps_bisto: float = EPS_BISTO
    eps_drift: float = EPS_DRIFT

    @property
    def normalized(self) -> bool:
        return bool((self.row_deviation <= self.eps_bisto).all())

    @property
    def bistochastic(self) -> bool:
        return bool((self.column_deviation <= self.eps_bisto).all())

    @property
    def zero_drift(self) -> bool:
        return bool((self.drift <= self.eps_drift).all())

    @property
    def elliptic(self) -> bool:
        """All kernel entries over the jump set strictly positive."""
        return bool((self.min_entry > 0).all())

    @property
    def passed(self) -> bool:
        return (self.normalized and self.bistochastic and self.zero_drift
                and bool((self.min_entry >= 0).all()))

    def failures(self) -> list[str]:
        out = []
        if not self.normalized:
            out.append("row sums")
        if not self.bistochastic:
            out.append("column sums")
        if not self.zero_drift:
            out.append("local drift")
        if (self.min_entry < 0).any():
            out.append("negative entry")
        return out

    def summary(self) -> dict:
        return {
            "n_sites": int(len(self.sites)),
            "max_row_deviation": float(self.row_deviation.max()),
            "max_column_deviation": float(self.column_deviation.max()),
            "max_drift": float(self.drift.max()),
            "min_entry": float(self.min_entry.min()),
            "min_positive_entry": float(self.min_positive_entry.min()),
            "eps_bisto": self.eps_bisto,
            "eps_drift": self.eps_drift,
            "normalized": self.normalized,
            "bistochastic": self.bistochastic,
            "zero_drift": self.zero_drift,
            "elliptic": self.elliptic,
            "passed": self.passed,
            "failures": self.failures(),
        }


def validate_environment(view: EnvironmentView, sites, eps_bisto: float = EPS_BISTO,
                         eps_drift: float = EPS_DRIFT) -> ValidationReport:
    """Check normalization, bistochasticity, zero local drift and positivity at ``sites``.

    Column sums use the incoming kernel ``q'_i = q_i(tau_{-d_i} omega)``, i.e.
    ``p(x - d_i, x)`` read off shifted views.
    """
    xs = np.asarray(sites, dtype=np.int64).reshape(-1, view.dims)
    if len(xs) == 0:
        raise ValueError("validate_environment needs at least one site")
    lam = view.lam.array
    n = len(lam)
    q = view.kernels(xs)
    row_dev = np.abs(q.sum(axis=1) - 1.0)
    back = (xs[:, None, :] - lam[None, :, :]).reshape(-1, view.dims)
    q_back = view.kernels(back).reshape(len(xs), n, n)
    q_in = q_back[:, np.arange(n), np.arange(n)]
    col_dev = np.abs(q_in.sum(axis=1) - 1.0)
    drift = np.abs(q @ lam.astype(np.float64)).max(axis=1)
    pos = np.where(q > 0, q, np.inf)
    return ValidationReport(
        sites=xs,
        row_deviation=row_dev,
        column_deviation=col_dev,
        drift=drift,
        min_entry=q.min(axis=1),
        min_positive_entry=pos.min(axis=1),
        eps_bisto=eps_bisto,
        eps_drift=eps_drift,
    )
