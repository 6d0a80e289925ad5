import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab.environment import (
    LATTICE_LIMIT,
    EnvironmentError,
    EnvironmentSpec,
    EnvironmentView,
    JumpSet,
    LatticeRangeError,
    LocalMatrix,
    SinkhornError,
    birkhoff_combine,
    default_lambda0,
    kernel_at,
    kernels_at_sites,
    local_matrices,
    permutation_list,
    sample_local_matrix,
    shift,
    sinkhorn_normalize,
    validate_environment,
)


def iid(dims=1, seed=3, lambda0=None, **kw):
    return EnvironmentSpec("iid-appendix", dims, seed, lambda0=lambda0, **kw)


def periodic(kernels, period, lam):
    return EnvironmentSpec("explicit-periodic", len(period),
                           table={"period": period, "lambda": lam, "kernels": kernels})


# -- jump sets and local matrices ---------------------------------------------


def test_jumpset_validation():
    js = JumpSet.from_vectors([[-1, 0], [1, 0], [0, -1], [0, 1]])
    assert len(js) == 4 and js.is_symmetric() and js.index((0, 1)) == 3
    with pytest.raises(EnvironmentError):
        JumpSet.from_vectors([[1], [1]])
    with pytest.raises(EnvironmentError):
        JumpSet.from_vectors([[1]])


def test_sinkhorn_two_by_two_closed_form():
    # the scaling limit of [[a, b], [c, d]] is [[t, 1-t], [1-t, t]] with
    # (t / (1-t))^2 = ad / bc
    r = math.sqrt(2 / 3)
    t = r / (1 + r)
    m = sinkhorn_normalize([[1.0, 2.0], [3.0, 4.0]]).entries
    np.testing.assert_allclose(m, [[t, 1 - t], [1 - t, t]], atol=1e-12)


@given(st.integers(2, 6), st.integers(0, 2**32))
def test_sinkhorn_output_is_bistochastic(n, seed):
    raw = np.random.default_rng(seed).uniform(0.1, 1.0, (n, n))
    lm = sinkhorn_normalize(raw)
    assert lm.row_deviation() < 1e-12 and lm.column_deviation() < 1e-12
    # scaling preserves the cross ratios
    m = lm.entries
    assert m[0, 0] * m[1, 1] / (m[0, 1] * m[1, 0]) == pytest.approx(
        raw[0, 0] * raw[1, 1] / (raw[0, 1] * raw[1, 0]), rel=1e-9)


def test_sinkhorn_errors():
    with pytest.raises(ValueError):
        sinkhorn_normalize([[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(SinkhornError):
        sinkhorn_normalize([[1.0, 2.0], [3.0, 4.0]], max_iter=1)


def test_birkhoff_two_by_two():
    m = birkhoff_combine([0.3, 0.7], [(0, 1), (1, 0)]).entries
    np.testing.assert_allclose(m, [[0.3, 0.7], [0.7, 0.3]], atol=0)


def test_birkhoff_all_permutations_of_three():
    perms = list(itertools.permutations(range(3)))
    w = np.random.default_rng(1).dirichlet(np.ones(6))
    lm = birkhoff_combine(w, perms, require_coverage=True)
    assert lm.row_deviation() < 1e-14 and lm.column_deviation() < 1e-14
    with pytest.raises(ValueError):
        birkhoff_combine([1.0], [(0, 1, 2)], require_coverage=True)
    with pytest.raises(ValueError):
        birkhoff_combine([0.5, 0.6], [(0, 1), (1, 0)])


def test_permutation_list_order_and_cap():
    perms = permutation_list(3)
    assert perms[:3] == [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    assert sorted(perms) == sorted(itertools.permutations(range(3)))
    assert len(permutation_list(8, num_perms=10)) == 10
    with pytest.raises(EnvironmentError):
        permutation_list(7)
    with pytest.raises(EnvironmentError):
        permutation_list(3, num_perms=7)


def test_local_matrix_rejects_bad_entries():
    with pytest.raises(ValueError):
        LocalMatrix(((0,), (1,)), np.array([[0.5, -0.5], [0.5, 1.5]]))


# -- specs --------------------------------------------------------------------


def test_default_lambda0():
    assert default_lambda0(1, 3) == [[0], [1], [2]]
    assert default_lambda0(2, 4) == [[0, 0], [1, 0], [0, 1], [1, 1]]
    assert iid(dims=2).n0 == 3


def test_iid_jump_set_is_difference_set():
    spec = iid(dims=2, lambda0=[[0, 0], [1, 0], [0, 1]])
    lam = set(spec.jumps.displacements)
    assert lam == {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)}
    assert spec.jumps.is_symmetric()
    assert list(spec.jumps.displacements) == sorted(lam)


def test_spec_json_round_trip():
    for spec in [iid(dims=2, seed=9), iid(sampler="birkhoff", lambda0=[[0], [1], [2]]),
                 EnvironmentSpec("simple-symmetric", 3, 1),
                 periodic([[0.5, 0.5]], [1], [[-1], [1]])]:
        again = EnvironmentSpec.from_json(spec.to_json())
        assert again == spec and again.to_json() == spec.to_json()


def test_spec_rejects_unknown_keys_and_kinds():
    with pytest.raises(EnvironmentError):
        EnvironmentSpec.from_dict({"kind": "iid-appendix", "dims": 1, "colour": 1})
    with pytest.raises(EnvironmentError):
        EnvironmentSpec("bogus", 1)
    with pytest.raises(EnvironmentError):
        EnvironmentSpec("explicit-periodic", 1)
    with pytest.raises(EnvironmentError):
        iid(sampler_params={"num_perms": 3})


# -- local draws and kernels --------------------------------------------------


def test_sample_local_matrix_is_reproducible_and_site_dependent():
    spec = iid(dims=2, seed=5)
    a = sample_local_matrix(spec, (3, -4))
    assert a.is_bistochastic(1e-12)
    np.testing.assert_array_equal(a.entries, sample_local_matrix(spec, (3, -4)).entries)
    assert not np.array_equal(a.entries, sample_local_matrix(spec, (3, -3)).entries)
    assert not np.array_equal(a.entries, sample_local_matrix(spec.with_seed(6), (3, -4)).entries)


def test_birkhoff_sampler_two_point_base():
    spec = iid(sampler="birkhoff")
    m = sample_local_matrix(spec, (0,)).entries
    w = m[0, 0]
    np.testing.assert_allclose(m, [[w, 1 - w], [1 - w, w]], atol=0)
    assert 0 < w < 1


def brute_force_kernel(spec, x, window=6):
    """Sum every block ``omega[zeta]`` placed on ``lambda0 - zeta`` over a window of zetas."""
    lam0 = [tuple(v) for v in spec.to_dict()["lambda0"]]
    n0 = len(lam0)
    x = tuple(x)
    o = {}
    for zeta in itertools.product(range(-window, window + 1), repeat=spec.dims):
        m = local_matrices(spec, [zeta])[0]
        for a, u in enumerate(lam0):
            site = tuple(ui - zi for ui, zi in zip(u, zeta))
            if site != x:
                continue
            for c, v in enumerate(lam0):
                y = tuple(vi - zi for vi, zi in zip(v, zeta))
                e = tuple(yi - xi for yi, xi in zip(y, x))
                o[e] = o.get(e, 0.0) + m[a, c] / n0
    lam = spec.jumps.displacements
    return np.array([(o.get(e, 0.0) + o.get(tuple(-c for c in e), 0.0)) / 2 for e in lam])


@pytest.mark.parametrize("dims,lambda0,x", [
    (1, [[0], [1]], (0,)),
    (1, [[0], [1], [3]], (2,)),
    (2, [[0, 0], [1, 0], [0, 1]], (1, -2)),
])
def test_kernel_matches_windowed_brute_force(dims, lambda0, x):
    spec = iid(dims=dims, seed=11, lambda0=lambda0)
    got = kernel_at(EnvironmentView(spec), x)
    np.testing.assert_allclose(got, brute_force_kernel(spec, x, window=4), atol=1e-15)


def test_kernel_closed_form_two_point_base():
    # d=1, base {0, 1}: p(x, x +- 1) = (w[-x][0,1] + w[1-x][1,0]) / 4
    spec = iid(seed=2)
    for x in (-3, 0, 5):
        q = kernel_at(EnvironmentView(spec), (x,))
        a = sample_local_matrix(spec, (-x,)).entries
        b = sample_local_matrix(spec, (1 - x,)).entries
        side = (a[0, 1] + b[1, 0]) / 4
        np.testing.assert_allclose(q, [side, 1 - 2 * side, side], atol=1e-15)


sites1 = st.integers(-10**6, 10**6)


@given(st.integers(0, 2**63), st.tuples(sites1, sites1), st.tuples(sites1, sites1))
def test_shift_equivariance(seed, x, z):
    view = EnvironmentView(iid(dims=2, seed=seed))
    np.testing.assert_array_equal(kernel_at(shift(view, z), x),
                                  kernel_at(view, np.add(x, z)))


@given(st.integers(0, 2**63), st.lists(st.integers(-50, 50), min_size=1, max_size=20))
def test_batch_and_single_are_bit_identical(seed, xs):
    for spec in (iid(seed=seed), iid(seed=seed, sampler="birkhoff", lambda0=[[0], [1], [2]])):
        batch = kernels_at_sites(spec, np.array(xs)[:, None])
        for row, x in zip(batch, xs):
            np.testing.assert_array_equal(row, kernel_at(EnvironmentView(spec), (x,)))


@given(st.integers(0, 2**63), st.sampled_from([1, 2]), st.sampled_from([2, 3, 4]))
def test_iid_kernel_is_balanced_and_normalized(seed, dims, n0):
    spec = iid(dims=dims, seed=seed, lambda0=default_lambda0(dims, n0))
    q = kernels_at_sites(spec, np.arange(-5, 5)[:, None].repeat(dims, axis=1))
    lam = spec.jumps.displacements
    neg = [lam.index(tuple(-c for c in e)) for e in lam]
    np.testing.assert_array_equal(q, q[:, neg])
    assert np.abs(q.sum(axis=1) - 1).max() < 1e-12
    assert (q > 0).all()


def test_simple_symmetric_and_periodic_kernels():
    ss = EnvironmentView(EnvironmentSpec("simple-symmetric", 2))
    np.testing.assert_array_equal(ss.kernel((7, 7)), [0.25] * 4)
    assert ss.lam.displacements == ((-1, 0), (1, 0), (0, -1), (0, 1))
    per = periodic([[0.5, 0.5], [0.25, 0.75], [0.5, 0.5]], [3], [[-1], [1]])
    v = EnvironmentView(per)
    np.testing.assert_array_equal(v.kernel((4,)), [0.25, 0.75])
    np.testing.assert_array_equal(v.kernel((-2,)), [0.25, 0.75])


def test_lattice_range_is_enforced():
    view = EnvironmentView(iid())
    kernel_at(view, (LATTICE_LIMIT,))
    with pytest.raises(LatticeRangeError):
        kernel_at(view, (LATTICE_LIMIT + 1,))
    with pytest.raises(LatticeRangeError):
        shift(view, (-LATTICE_LIMIT - 1,))


# -- validation ---------------------------------------------------------------


def test_validation_accepts_homogeneous_and_balanced_periodic():
    sites = np.arange(-20, 20)[:, None]
    assert validate_environment(EnvironmentView(EnvironmentSpec("simple-symmetric", 1)), sites).passed
    # constant-in-each-direction balanced table on period 2 is bistochastic
    per = periodic([[0.3, 0.4, 0.3], [0.3, 0.4, 0.3]], [2], [[-1], [0], [1]])
    assert validate_environment(EnvironmentView(per), sites).passed


def test_validation_flags_drift():
    per = periodic([[0.4, 0.6]], [1], [[-1], [1]])
    rep = validate_environment(EnvironmentView(per), [[0], [1]])
    assert not rep.passed and rep.failures() == ["local drift"]
    assert rep.drift.max() == pytest.approx(0.2)


def test_validation_flags_non_bistochastic():
    # balanced (zero drift) but the holding probability varies: columns fail
    per = periodic([[0.25, 0.5, 0.25], [0.1, 0.8, 0.1]], [2], [[-1], [0], [1]])
    rep = validate_environment(EnvironmentView(per), [[0]])
    assert rep.zero_drift and rep.normalized and not rep.bistochastic
    assert rep.column_deviation[0] == pytest.approx(0.3)


def test_iid_validation_rows_drift_positivity():
    spec = iid(dims=2, seed=4)
    rng = np.random.default_rng(0)
    rep = validate_environment(EnvironmentView(spec), rng.integers(-10**4, 10**4, (100, 2)))
    assert rep.normalized and rep.zero_drift and rep.elliptic
    assert set(rep.summary()) >= {"max_row_deviation", "max_column_deviation", "max_drift", "passed"}
