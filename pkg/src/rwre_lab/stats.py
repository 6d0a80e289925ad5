"""Estimators for the limit theorems: covariance, CLT, martingale property,
Schmidt's small-ball criterion and recurrence.

All estimators fold over walks in walk-index order, so repeated runs give
identical floating-point results.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from . import prf
from .environment import EPS_DRIFT, EnvironmentSpec, kernels_at_sites
from .walker import WalkEnsemble, _simulate_chunk

__all__ = [
    "KS_THRESHOLD_999",
    "DEGENERATE_VARIANCE",
    "SCHMIDT_RATIO_THRESHOLD",
    "CovarianceEstimate",
    "CLTReport",
    "MartingaleReport",
    "SchmidtTable",
    "RecurrenceReport",
    "theoretical_covariance",
    "empirical_covariance",
    "covariance_agreement",
    "ks_distance",
    "clt_distribution_test",
    "martingale_audit",
    "schmidt_criterion",
    "recurrence_stats",
]

# 0.999 quantile of the Kolmogorov distribution (scipy.stats.kstwobign.ppf(0.999) = 1.9495...)
KS_THRESHOLD_999 = 1.95
DEGENERATE_VARIANCE = 1e-8
# existential constant of the small-ball bound; an acceptance choice, not a derived value
SCHMIDT_RATIO_THRESHOLD = 0.05


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------


@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    n_samples: int
    standard_errors: np.ndarray
    mean: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "matrix": self.matrix.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "n_samples": self.n_samples,
        }
        if self.mean is not None:
            out["mean"] = self.mean.tolist()
        return out


def _second_moments(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of ``v v^T`` over rows ``v`` of ``samples``."""
    prods = samples[:, :, None] * samples[:, None, :]
    m = len(samples)
    mean = prods.mean(axis=0)
    if m > 1:
        se = prods.std(axis=0, ddof=1) / math.sqrt(m)
    else:
        se = np.zeros_like(mean)
    # symmetric by construction
    mean = (mean + mean.T) / 2
    se = (se + se.T) / 2
    return mean, se


def _local_second_moment(q: np.ndarray, lam: np.ndarray) -> np.ndarray:
    lam = lam.astype(np.float64)
    return np.einsum("bi,ia,ic->bac", q, lam, lam)


def theoretical_covariance(spec: EnvironmentSpec, n_env_samples: int,
                           first_index: int = 0) -> CovarianceEstimate:
    """Environment average of ``sum_i q_i d_i d_i^T`` at the origin.

    The fiber integral of ``D^a D^b`` is exactly ``sum_i q_i d_i^a d_i^b``
    because ``D`` is constant on each cell.  For ``iid-appendix`` the
    environment average is Monte Carlo over environments
    ``PRF(seed, "cov-env", j)`` for ``j`` in
    ``first_index .. first_index + n_env_samples - 1``; periodic tables are
    averaged exactly over the fundamental domain.
    """
    if n_env_samples < 1:
        raise ValueError("n_env_samples must be >= 1")
    lam = spec.jumps.array
    d = spec.dims
    if spec.kind == "iid-appendix":
        j = np.arange(first_index, first_index + n_env_samples, dtype=np.uint64)
        seeds = prf.derive_seed(spec.seed, "cov-env", j)
        q = kernels_at_sites(spec, np.zeros((n_env_samples, d), dtype=np.int64), seeds)
    elif spec.kind == "explicit-periodic":
        period = spec.table["period"]
        cells = np.array(list(np.ndindex(*period)), dtype=np.int64)
        q = kernels_at_sites(spec, cells)
        mom = _local_second_moment(q, lam).mean(axis=0)
        return CovarianceEstimate((mom + mom.T) / 2, len(cells), np.zeros((d, d)))
    else:
        q = kernels_at_sites(spec, np.zeros((1, d), dtype=np.int64))
        mom = _local_second_moment(q, lam)[0]
        return CovarianceEstimate(mom, n_env_samples, np.zeros((d, d)))
    mom = _local_second_moment(q, lam)
    mean = mom.mean(axis=0)
    se = mom.std(axis=0, ddof=1) / math.sqrt(n_env_samples) if n_env_samples > 1 else np.zeros((d, d))
    return CovarianceEstimate((mean + mean.T) / 2, n_env_samples, (se + se.T) / 2)


def empirical_covariance(ens: WalkEnsemble, n: int | None = None) -> CovarianceEstimate:
    """Second-moment matrix of ``X_n / sqrt(n)`` over the walks (mean not subtracted)."""
    n = ens.n_steps if n is None else n
    if n < 1:
        raise ValueError("need at least one step")
    if ens.n_walks == 0:
        raise ValueError("empty ensemble")
    z = ens.at(n) / math.sqrt(n)
    mat, se = _second_moments(z)
    return CovarianceEstimate(mat, ens.n_walks, se, z.mean(axis=0))


def covariance_agreement(a: CovarianceEstimate, b: CovarianceEstimate) -> np.ndarray:
    """Entrywise ``|a - b|`` in units of the combined standard error."""
    combined = np.sqrt(a.standard_errors**2 + b.standard_errors**2)
    diff = np.abs(a.matrix - b.matrix)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(combined > 0, diff / combined, np.where(diff > 0, np.inf, 0.0))
    return z


# ---------------------------------------------------------------------------
# CLT
# ---------------------------------------------------------------------------


def ks_distance(samples, cdf=ndtr) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``.

    Ties are handled by evaluating the empirical CDF on both sides of each
    distinct value.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    m = len(x)
    if m == 0:
        raise ValueError("no samples")
    vals, counts = np.unique(x, return_counts=True)
    upper = np.cumsum(counts) / m
    lower = upper - counts / m
    f = cdf(vals)
    return float(max(np.abs(upper - f).max(), np.abs(f - lower).max()))


@dataclass
class CLTReport:
    n: int
    statistics: list
    scaled: list
    skipped: list
    threshold: float = KS_THRESHOLD_999

    @property
    def passed(self) -> bool:
        return all(s is None or s < self.threshold for s in self.scaled)

    def to_dict(self) -> dict:
        return {"n": self.n, "statistics": self.statistics, "scaled": self.scaled,
                "skipped": self.skipped, "threshold": self.threshold, "passed": self.passed}


def clt_distribution_test(ens: WalkEnsemble, cov: CovarianceEstimate,
                          n: int | None = None) -> CLTReport:
    """Per-coordinate Kolmogorov distance of ``X_n^a / sqrt(n c_aa)`` from N(0, 1).

    Coordinates with ``c_aa < 1e-8`` are skipped and listed in ``skipped``.
    """
    n = ens.n_steps if n is None else n
    diag = np.diag(cov.matrix)
    if (diag < DEGENERATE_VARIANCE).all():
        raise ValueError("covariance is degenerate in every coordinate")
    x = ens.at(n).astype(np.float64)
    stats, scaled, skipped = [], [], []
    for a in range(ens.dims):
        if diag[a] < DEGENERATE_VARIANCE:
            stats.append(None)
            scaled.append(None)
            skipped.append(a)
            continue
        dist = ks_distance(x[:, a] / math.sqrt(n * diag[a]))
        stats.append(dist)
        scaled.append(dist * math.sqrt(ens.n_walks))
    return CLTReport(n, stats, scaled, skipped)


# ---------------------------------------------------------------------------
# Martingale audit
# ---------------------------------------------------------------------------


@dataclass
class MartingaleReport:
    max_drift: float
    worst_walk: int
    worst_step: int
    n_checked: int
    eps_drift: float = EPS_DRIFT

    @property
    def passed(self) -> bool:
        return self.max_drift <= self.eps_drift

    def to_dict(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


def martingale_audit(ens: WalkEnsemble, eps_drift: float = EPS_DRIFT,
                     batch_walks: int = 256) -> MartingaleReport:
    """Largest local-drift component over every site every walk stood on before a step.

    Replays the trajectories against their environments.  Ensembles recorded
    only at some steps are re-simulated batch by batch from their seeds.
    """
    lam = ens.spec.jumps.array.astype(np.float64)
    n = ens.n_steps
    worst, wj, wk = 0.0, 0, 0
    if n == 0:
        return MartingaleReport(0.0, 0, 0, 0, eps_drift)
    for lo in range(0, ens.n_walks, batch_walks):
        hi = min(lo + batch_walks, ens.n_walks)
        if ens.full:
            path = ens.positions[lo:hi]
        else:
            path, _ = _simulate_chunk(ens.spec.to_dict(), ens.env_seeds[lo:hi], ens.streams[lo:hi],
                                      n, np.arange(n + 1))
        sites = path[:, :n].reshape(-1, ens.dims)
        seeds = np.repeat(ens.env_seeds[lo:hi], n)
        q = kernels_at_sites(ens.spec, sites, seeds)
        drift = np.abs(q @ lam).max(axis=1)
        k = int(drift.argmax())
        if drift[k] > worst:
            worst = float(drift[k])
            wj, wk = lo + k // n, k % n
    return MartingaleReport(worst, wj, wk, ens.n_walks * n, eps_drift)


# ---------------------------------------------------------------------------
# Schmidt criterion
# ---------------------------------------------------------------------------


@dataclass
class SchmidtTable:
    dims: int
    rows: list = field(default_factory=list)

    def add(self, n, rho, r_est, stderr):
        self.rows.append({"n": int(n), "rho": float(rho), "r_est": float(r_est),
                          "ratio": float(r_est / rho**self.dims), "stderr": float(stderr)})

    def min_ratio(self) -> float:
        return min(r["ratio"] for r in self.rows)

    def passes(self, threshold: float = SCHMIDT_RATIO_THRESHOLD) -> bool:
        return self.min_ratio() >= threshold

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["n", "rho", "r_est", "ratio", "stderr"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()


def _norm(x: np.ndarray, norm: str) -> np.ndarray:
    if norm == "euclidean":
        return np.sqrt((x * x).sum(axis=1))
    if norm == "max":
        return np.abs(x).max(axis=1)
    if norm == "l1":
        return np.abs(x).sum(axis=1)
    raise ValueError(f"unknown norm {norm!r}")


def schmidt_criterion(ens: WalkEnsemble, n_list: Sequence[int], rho_list: Sequence[float],
                      norm: str = "euclidean") -> SchmidtTable:
    """Fraction of walks with ``|X_n / n^(1/d)| < rho``, its ratio to ``rho^d`` and binomial error."""
    if not len(n_list) or not len(rho_list):
        raise ValueError("n_list and rho_list must be nonempty")
    table = SchmidtTable(ens.dims)
    m = ens.n_walks
    for n in n_list:
        if not 1 <= n <= ens.n_steps:
            raise ValueError(f"n={n} outside 1..{ens.n_steps}")
        r = _norm(ens.at(n).astype(np.float64), norm) / n ** (1.0 / ens.dims)
        for rho in rho_list:
            if rho <= 0:
                raise ValueError("rho must be positive")
            p = float(np.count_nonzero(r < rho)) / m
            table.add(n, rho, p, math.sqrt(p * (1 - p) / m))
    return table


def dyadic_steps(n_steps: int, start: int = 1) -> list[int]:
    out = []
    k = start
    while k <= n_steps:
        out.append(k)
        k *= 2
    return out


# ---------------------------------------------------------------------------
# Recurrence
# ---------------------------------------------------------------------------


@dataclass
class RecurrenceReport:
    """``return_fraction[n-1]`` is the fraction of walks back at 0 at some step ``1..n``."""

    n_walks: int
    first_return_counts: np.ndarray
    return_fraction: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.return_fraction)

    def fraction_by(self, n: int) -> float:
        return float(self.return_fraction[n - 1])

    @property
    def first_return_histogram(self) -> dict:
        nz = np.flatnonzero(self.first_return_counts)
        return {int(k + 1): int(self.first_return_counts[k]) for k in nz}

    @property
    def monotone(self) -> bool:
        return bool((np.diff(self.return_fraction) >= 0).all())

    def stderr(self, n: int) -> float:
        p = self.fraction_by(n)
        return math.sqrt(p * (1 - p) / self.n_walks)

    def to_csv(self, steps: Iterable[int] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "return_fraction", "first_return_count"])
        steps = range(1, self.n_steps + 1) if steps is None else steps
        for k in steps:
            w.writerow([k, repr(float(self.return_fraction[k - 1])),
                        int(self.first_return_counts[k - 1])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"n_walks": self.n_walks, "n_steps": self.n_steps,
                "final_return_fraction": float(self.return_fraction[-1]) if self.n_steps else 0.0,
                "monotone": self.monotone,
                "first_return_histogram": self.first_return_histogram}


def recurrence_stats(ens: WalkEnsemble) -> RecurrenceReport:
    """First-return histogram and cumulative return fraction of an ensemble."""
    n = ens.n_steps
    fr = ens.first_return
    counts = np.bincount(fr[fr > 0] - 1, minlength=n)[:n] if n else np.zeros(0, dtype=np.int64)
    frac = np.cumsum(counts) / ens.n_walks
    return RecurrenceReport(ens.n_walks, counts, frac)
