"""Compiled per-site kernels for the iid-appendix environment.

These are the only implementation of the local-matrix draw and the block
average, so single-site and batched calls agree bit for bit.  The hash is
the same SplitMix64 chain as :func:`rwre_lab.prf.hash_words`.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

SINKHORN = 0
BIRKHOFF = 1


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _absorb(h, w):
    return _mix((h ^ w) + _GOLDEN)


@njit(cache=True)
def site_prefix(seed, tag, coords):
    """Hash state after absorbing ``(seed, tag, coords...)``."""
    h = _absorb(_GOLDEN, seed)
    h = _absorb(h, tag)
    for c in coords:
        h = _absorb(h, np.uint64(c))
    return h


@njit(cache=True)
def uniform_from(prefix, j):
    return np.float64(_absorb(prefix, np.uint64(j)) >> _S11) * _INV53


@njit(cache=True)
def sinkhorn_inplace(m, tol, max_iter):
    """Row/column rescaling of ``m`` until every sum is within ``tol`` of 1.

    Returns the number of sweeps, or -1 if ``max_iter`` was exhausted.
    """
    n = m.shape[0]
    it = 0
    while True:
        dev = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += m[i, j]
            dev = max(dev, abs(s - 1.0))
        for j in range(n):
            s = 0.0
            for i in range(n):
                s += m[i, j]
            dev = max(dev, abs(s - 1.0))
        if dev < tol:
            return it
        if it >= max_iter:
            return -1
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += m[i, j]
            for j in range(n):
                m[i, j] = m[i, j] / s
        for j in range(n):
            s = 0.0
            for i in range(n):
                s += m[i, j]
            for i in range(n):
                m[i, j] = m[i, j] / s
        it += 1


@njit(cache=True)
def draw_local(m, prefix, sampler, low, high, tol, max_iter, perm_mats):
    """Fill ``m`` with the local bistochastic matrix keyed by ``prefix``."""
    n0 = m.shape[0]
    if sampler == SINKHORN:
        for a in range(n0):
            for b in range(n0):
                m[a, b] = low + (high - low) * uniform_from(prefix, a * n0 + b)
        return sinkhorn_inplace(m, tol, max_iter)
    k = perm_mats.shape[0]
    w = np.empty(k)
    if k == 1:
        w[0] = 1.0
    else:
        u = np.empty(k - 1)
        for t in range(k - 1):
            u[t] = uniform_from(prefix, t)
        u.sort()
        prev = 0.0
        for t in range(k - 1):
            w[t] = u[t] - prev
            prev = u[t]
        w[k - 1] = 1.0 - prev
    for a in range(n0):
        for b in range(n0):
            acc = w[0] * perm_mats[0, a, b]
            for t in range(1, k):
                acc = acc + w[t] * perm_mats[t, a, b]
            m[a, b] = acc
    return 0


@njit(cache=True)
def local_matrices(seeds, zetas, tag, n0, sampler, low, high, tol, max_iter, perm_mats):
    b = zetas.shape[0]
    out = np.empty((b, n0, n0))
    for r in range(b):
        pre = site_prefix(seeds[r], tag, zetas[r])
        if draw_local(out[r], pre, sampler, low, high, tol, max_iter, perm_mats) < 0:
            return out, r
    return out, -1


@njit(cache=True)
def iid_kernels(seeds, sites, tag, lam0, pair_index, neg_index, n_out, sampler,
                low, high, tol, max_iter, perm_mats):
    """Balanced block-average kernel at each site; second value is a failed row or -1."""
    b, d = sites.shape
    n0 = lam0.shape[0]
    out = np.zeros((b, n_out))
    o = np.empty(n_out)
    m = np.empty((n0, n0))
    zeta = np.empty(d, dtype=np.int64)
    for r in range(b):
        for e in range(n_out):
            o[e] = 0.0
        for a in range(n0):
            for k in range(d):
                zeta[k] = lam0[a, k] - sites[r, k]
            pre = site_prefix(seeds[r], tag, zeta)
            if draw_local(m, pre, sampler, low, high, tol, max_iter, perm_mats) < 0:
                return out, r
            for c in range(n0):
                o[pair_index[a, c]] += m[a, c]
        for e in range(n_out):
            o[e] = o[e] / n0
        for e in range(n_out):
            out[r, e] = (o[e] + o[neg_index[e]]) / 2.0
    return out, -1
