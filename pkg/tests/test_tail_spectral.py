import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_extremes.field_models import (
    IIDFrechet,
    LinearHeavyTail,
    MovingMaxima,
    kernel_from_list,
    simulate_box,
    spectral_tail_oracle,
)
from lattice_extremes.lattice_core import Sublattice
from lattice_extremes.tail_spectral import (
    Bump,
    Modulus,
    Threshold,
    cluster_field,
    dcor_test,
    distance_correlation,
    estimate_spectral_tail,
    estimate_upsilon_tail,
    independence_check,
    pareto_check,
    time_change_check,
    upsilon_tail_oracle,
)

MM11 = MovingMaxima(kernel_from_list([1.0, 1.0]), 1.0)
MM21 = MovingMaxima(kernel_from_list([2.0, 1.0]), 1.0)
LIN = LinearHeavyTail(kernel_from_list([1.0, -0.6]), 1.5)


@pytest.fixture(scope="module")
def mm_fields():
    return simulate_box(MM11, (400,), 400, np.random.default_rng(0))


def test_modulus_examples():
    x = {(0,): 3.0, (1,): -4.0}
    assert Modulus.sup([(0,), (1,)]).eval(x) == 4.0
    assert Modulus.alpha_norm([(0,), (1,)], 2.0).eval(x) == pytest.approx(5.0)
    assert Modulus.alpha_norm([(0,), (1,)], 1.0).eval(x) == pytest.approx(7.0)
    assert Modulus.sup([(0,)]).shifted((2,)).upsilon == ((2,),)
    with pytest.raises(ValueError, match="not inside"):
        Modulus.sup([(5,)]).eval(x)
    with pytest.raises(ValueError):
        Modulus("l2", ((0,),))
    with pytest.raises(ValueError):
        Modulus.sup([])


def test_modulus_constants_on_random_vectors():
    g = np.random.default_rng(1)
    X = g.standard_cauchy((10_000, 4))
    ups = [(i,) for i in range(4)]
    for m in (Modulus.sup(ups), Modulus.alpha_norm(ups, 0.7), Modulus.alpha_norm(ups, 2.0)):
        C, D = m.constants()
        rho = m.reduce(X)
        mx = np.abs(X).max(axis=1)
        eps = mx * g.uniform(1.0, 1.5, len(mx))  # max|x| < ε
        assert np.all(rho < eps / C * (1 + 1e-12))
        eps = rho * g.uniform(1.0, 1.5, len(mx))  # ρ < ε
        assert np.all(mx < D * eps * (1 + 1e-12) + 1e-300)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.floats(-50, 50),
       st.sampled_from(["sup", 0.5, 1.0, 3.0]))
def test_modulus_homogeneous(vals, c, kind):
    ups = [(0,), (1,), (2,)]
    m = Modulus.sup(ups) if kind == "sup" else Modulus.alpha_norm(ups, kind)
    x = np.array(vals)
    assert m.reduce(c * x) == pytest.approx(abs(c) * m.reduce(x), rel=1e-9, abs=1e-9)
    assert (m.reduce(x) == 0) == bool(np.all(x == 0))


def test_spectral_tail_normalisation(mm_fields):
    u = float(np.quantile(mm_fields, 0.995))
    W = [(s,) for s in range(-2, 3)]
    b = estimate_spectral_tail(mm_fields, u, W, 1.0)
    assert len(b) > 500
    assert np.allclose(np.abs(b.column((0,))), 1.0)
    assert np.all(b.radial > 1)
    # nothing wrapped: every anchor has its window inside the grid
    assert b.anchors[:, 1].min() >= 2 and b.anchors[:, 1].max() <= 397
    # degenerate Υ = {0} with the sup norm is the same estimator
    bu = estimate_upsilon_tail(mm_fields, Modulus.sup([(0,)]), u, W, 1.0)
    assert np.array_equal(bu.values, b.values) and np.array_equal(bu.anchors, b.anchors)


def test_upsilon_tail_normalisation(mm_fields):
    m = Modulus.alpha_norm([(0,), (1,)], 1.0)
    u = float(np.quantile(mm_fields, 0.995))
    b = estimate_upsilon_tail(mm_fields, m, u, [(s,) for s in range(-2, 3)], 1.0)
    assert np.allclose(m.eval(b.values, b.offsets), 1.0)
    # c(Υ) = 2 for MM(1,1) with the 1-norm over two neighbours
    assert abs(b.extras["c_estimate"] - 2.0) < 0.25


def test_threshold_errors(mm_fields):
    with pytest.raises(ValueError, match="largest observed"):
        estimate_spectral_tail(mm_fields, 1e12, [(0,), (1,)], 1.0)
    with pytest.raises(ValueError, match="quantile"):
        estimate_spectral_tail(mm_fields, 0.1, [(0,), (1,)], 1.0)


def test_pareto_check():
    g = np.random.default_rng(2)
    assert pareto_check(g.random(5000) ** -1.0, 1.0)["pass"]
    assert not pareto_check(1 + g.standard_exponential(5000), 1.0)["pass"]


def test_independence():
    g = np.random.default_rng(3)
    x = g.normal(size=300)
    assert dcor_test(x, g.normal(size=300), n_perm=99)["p_value"] > 0.01
    assert dcor_test(x, x ** 2, n_perm=99)["p_value"] < 0.05
    assert distance_correlation(x, 2 * x + 1) == pytest.approx(1.0)


def test_independence_mm_batch(mm_fields):
    u = float(np.quantile(mm_fields, 0.998))
    b = estimate_spectral_tail(mm_fields, u, [(-1,), (0,), (1,)], 1.0)
    assert independence_check(b, n_perm=99)["pass"]


# --- exact Θ_Υ ---------------------------------------------------------------


def test_upsilon_oracle():
    for model in (MM11, MM21, LIN):
        m = Modulus.alpha_norm([(0,), (1,)], model.alpha)
        smp = upsilon_tail_oracle(model, m)
        V = smp.sample(np.random.default_rng(0), 5000, [(0,), (1,), (3,)])
        assert np.allclose(m.reduce(V[:, :2]), 1.0)
    assert upsilon_tail_oracle(MM11, Modulus.alpha_norm([(0,), (1,)], 1.0)).c_value() == pytest.approx(2.0)
    # a singleton Υ reduces to Θ
    smp = upsilon_tail_oracle(MM21, Modulus.sup([(0,)]))
    assert smp.c_value() == pytest.approx(1.0)
    V = smp.sample(np.random.default_rng(1), 60_000, [(1,)])
    assert abs(np.mean(V[:, 0] == 0.5) - 2 / 3) < 0.01
    V = upsilon_tail_oracle(IIDFrechet(), Modulus.alpha_norm([(0,), (1,)], 1.0)).sample(
        np.random.default_rng(0), 100, [(0,), (1,)])
    assert np.all(V.sum(axis=1) == 1)


# --- time change ---------------------------------------------------------------


def exact_time_change(model, g, s, t):
    """Both sides by enumerating the atoms of Θ for a moving-maximum kernel."""
    w = dict(model.kernel)
    a = model.alpha
    mass = sum(v ** a for v in w.values())
    lhs = rhs = 0.0
    for j, aj in w.items():
        p = aj ** a / mass
        th = lambda o: w.get((j[0] + o[0],), 0.0) / aj
        ts = (t[0] - s[0],)
        lhs += p * float(g(np.array(th(ts)))) * (th((-s[0],)) != 0)
        if th(s) != 0:
            rhs += p * float(g(np.array(th(t) / th(s)))) * th(s) ** a
    return lhs, rhs


@pytest.mark.parametrize("model", [MM11, MM21])
@pytest.mark.parametrize("g", [Threshold(0.4), Bump(0.3, 3.0), Bump(0.1, 1.5, 2.0)])
def test_time_change_enumeration(model, g):
    smp = spectral_tail_oracle(model)
    for s, t in [((0,), (0,)), ((1,), (1,)), ((1,), (0,)), ((-1,), (1,)), ((1,), (2,))]:
        lhs, rhs = exact_time_change(model, g, s, t)
        assert lhs == pytest.approx(rhs, abs=1e-12)
        r = time_change_check(smp, g, s, t, model.alpha, 20_000, seed=5)
        assert abs(r["lhs"] - lhs) < 5 * g.c * 0.5 / np.sqrt(20_000)
        assert r["pass"]


def test_time_change_linear_and_y_version():
    smp = spectral_tail_oracle(LIN)
    for s, t in [((1,), (1,)), ((1,), (0,)), ((-1,), (1,))]:
        for version in ("theta", "Y"):
            r = time_change_check(smp, Bump(0.3, 3.0), s, t, LIN.alpha, 50_000, seed=1, version=version)
            assert r["pass"], r


def test_time_change_upsilon():
    m = Modulus.alpha_norm([(0,), (1,)], 1.0)
    smp = upsilon_tail_oracle(MM11, m)
    for s, t in [((1,), (1,)), ((2,), (0,))]:
        r = time_change_check(smp, Bump(0.3, 3.0), s, t, 1.0, 50_000, seed=2, modulus=m)
        assert r["pass"], r


def test_time_change_bad_version():
    with pytest.raises(ValueError):
        time_change_check(spectral_tail_oracle(MM11), Threshold(0.5), (1,), (1,), 1.0, 100, version="Z")


# --- cluster field -------------------------------------------------------------


def test_cluster_field_norm():
    smp = spectral_tail_oracle(MM21)
    offs = [(s,) for s in range(-6, 7)]
    V = smp.sample(np.random.default_rng(0), 2000, offs)
    cf = cluster_field(V, offs, Sublattice.full(1), 1.0, 6)
    assert np.allclose(np.abs(cf.q).sum(axis=1), 1.0)
    assert cf.max_tail_residual() == 0.0
    # on the even lattice MM(1,1) loses one of the two atoms half of the time
    V = spectral_tail_oracle(MM11).sample(np.random.default_rng(0), 100, offs)
    cf = cluster_field(V, offs, Sublattice.from_generators([(2,)]), 1.0, 6)
    assert np.allclose(cf.norm, 1.0)
    with pytest.raises(ValueError, match="zero norm"):
        cluster_field(np.zeros((2, len(offs))), offs, Sublattice.full(1), 1.0, 6)


def test_cluster_field_with_modulus():
    m = Modulus.alpha_norm([(0,), (1,)], 1.0)
    offs = [(s,) for s in range(-6, 8)]
    V = upsilon_tail_oracle(MM11, m).sample(np.random.default_rng(0), 500, offs)
    cf = cluster_field(V, offs, Sublattice.full(1), 1.0, 5, modulus=m)
    tot = sum(m.shifted(a).eval(cf.q, offs) for a in cf.support)
    assert np.allclose(tot, 1.0)


def test_bump_shape():
    g = Bump(1.0, 10.0, 2.0)
    x = np.array([0.0, 0.5, 1.0, 1.1, 5.0, -5.0, 9.5, 10.0, 20.0])
    y = g(x)
    assert y[0] == y[1] == y[2] == 0 and y[3] == pytest.approx(2.0) and y[4] == y[5] == 2.0
    assert 0 < y[6] < 2 and y[7] == 0 and y[8] == 0
    with pytest.raises(ValueError):
        Bump(5.0, 5.0)
    assert list(itertools.islice(Threshold(1.0)(np.array([0.5, 1.0, 1.5])), 3)) == [0, 0, 1]
