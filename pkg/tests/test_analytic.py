import itertools
import math

import numpy as np
import pytest

import oracles
from cachejt.analytic import (
    binomial_weights,
    build_interpolant,
    coop_terms,
    q_n0,
    q_n_a,
    r_m1,
    r_m2,
    stp_a,
)
from cachejt.model import ContentCatalog, NetworkParams, PlacementVector
from cachejt.numerics import QuadratureSpec

# Reference values from tests/oracles.py (unreduced integrals, scipy quadrature).
V1 = 0.17143183212584173  # q_n0(t=0.5, M=1, tau=1, alpha=4)
V2 = 0.09052637652306339  # q_n0(t=0.9, M=3, tau=1, alpha=4)
W1 = 0.6670238482205835  # R_{1,1}, M=2
W2 = 0.8988505231014409  # R_{2,1}, M=3
W3 = 0.8594338536138382  # R_{2,2}, M=2
NEAREST = 1.0 / (1.0 + math.pi / 4.0)


def P(m_coop=3, tau=1.0, alpha=4.0, **kw):
    return NetworkParams(m_coop=m_coop, tau=tau, alpha=alpha, **kw)


def test_q_n0_frozen():
    assert q_n0(0.5, P(1)).value == pytest.approx(V1, abs=1e-9)
    assert q_n0(0.9, P(3)).value == pytest.approx(V2, abs=1e-9)


def test_q_n0_rejects_zero():
    with pytest.raises(ValueError):
        q_n0(0.0, P())


def test_q_n0_t_one_defined():
    assert math.isfinite(q_n0(1.0, P()).value)


def test_r_m1_frozen():
    assert r_m1(3, P(3)).value == 0.0
    assert r_m1(1, P(2)).value == pytest.approx(W1, abs=1e-9)
    assert r_m1(2, P(3)).value == pytest.approx(W2, abs=1e-9)


def test_r_m1_single_dimension_closed_form():
    from scipy.integrate import quad

    c = lambda th: 1.0 + th * oracles.fg_arctan(th)
    ref = quad(lambda t: c(t ** 2) ** -2.0, 0.0, 1.0, epsabs=1e-13)[0]
    assert r_m1(1, P(2)).value == pytest.approx(ref, abs=1e-10)


def test_r_m2_frozen():
    assert r_m2(1, P(1)).value == pytest.approx(0.5600991535, abs=1e-10)
    assert r_m2(1, P(3)).value == pytest.approx(NEAREST ** 3, abs=1e-12)
    assert r_m2(2, P(2)).value == pytest.approx(W3, abs=1e-9)


def test_r_m_index_checks():
    with pytest.raises(ValueError):
        r_m1(0, P())
    with pytest.raises(ValueError):
        r_m2(4, P(3))


def test_coop_terms_m1():
    t = coop_terms(P(1))
    assert t.qc(1) == pytest.approx(NEAREST, abs=1e-10)


# Reduced forms vs direct quadrature of the unreduced integrals over a parameter grid.
# The alpha=3, M=3 corner needs a slow 3-D nquad per point, so only one tau is kept there.
ORACLE_GRID = (list(itertools.product([1, 2, 3], [0.3, 1.0, 5.0], [4.0]))
               + list(itertools.product([1, 2], [0.3, 1.0, 5.0], [3.0])) + [(3, 1.0, 3.0)])


@pytest.mark.parametrize("m_coop, tau, alpha", ORACLE_GRID)
def test_cooperative_terms_vs_direct(m_coop, tau, alpha):
    p = P(m_coop, tau, alpha)
    for m in range(1, m_coop + 1):
        if m < m_coop and m <= 2:
            assert r_m1(m, p).value == pytest.approx(oracles.r_m1_direct(m, m_coop, tau, alpha), abs=1e-6)
        if m <= 2:
            assert r_m2(m, p).value == pytest.approx(oracles.r_m2_direct(m, m_coop, tau, alpha), abs=1e-6)


@pytest.mark.parametrize("m_coop, tau, alpha", ORACLE_GRID)
@pytest.mark.parametrize("t", [0.05, 0.4, 0.95])
def test_q_n0_vs_direct(m_coop, tau, alpha, t):
    ref = oracles.q_n0_direct(t, m_coop, tau, alpha)
    assert q_n0(t, P(m_coop, tau, alpha)).value == pytest.approx(ref, abs=1e-6)


def test_three_dimensional_term_vs_direct():
    # R_{2,2} and R_{3,2} at M=3 (1- and 2-cube plus the half-line)
    p = P(3, 1.0, 4.0)
    assert r_m2(3, p).value == pytest.approx(oracles.r_m2_direct(3, 3, 1.0, 4.0), abs=1e-6)


@pytest.mark.parametrize("t", [0.0, 0.2, 0.7, 1.0])
def test_q_n_a_vs_direct(t):
    p = P(2, 1.0, 4.0)
    got = q_n_a(t, coop_terms(p), p)
    assert got == pytest.approx(oracles.q_n_a_direct(t, 2, 1.0, 4.0), abs=1e-6)


def test_q_n_a_endpoints():
    p = P(3)
    table = coop_terms(p)
    assert q_n_a(0.0, table, p) == 0.0
    assert q_n_a(1.0, table, p) == pytest.approx(table.qc(3), abs=1e-15)


def test_binomial_weights_sum():
    for t in (0.0, 0.3, 1.0):
        assert binomial_weights(t, 5).sum() == pytest.approx(1.0)


def test_q_c_values_are_probabilities():
    for m_coop in range(1, 7):
        q = coop_terms(P(m_coop)).q_c
        assert np.all((q >= 0) & (q <= 1))


def test_stp_uniform_catalog_collapses():
    p = P(3)
    cat = ContentCatalog(10, 0.0)
    pl = PlacementVector(np.full(10, 0.3), 3)
    res = stp_a(pl, cat, p)
    assert res.aggregate == pytest.approx(q_n_a(0.3, coop_terms(p), p), abs=1e-12)


def test_stp_interpolated_matches_exact():
    p = P(3)
    cat = ContentCatalog(100, 0.8)
    rng = np.random.default_rng(1)
    raw = rng.random(100)
    from cachejt.placement import project_capped_simplex

    pl = PlacementVector(project_capped_simplex(raw, 25), 25)
    a = stp_a(pl, cat, p, interpolate=True)
    b = stp_a(pl, cat, p, interpolate=False)
    assert a.aggregate == pytest.approx(b.aggregate, abs=1e-6)
    assert build_interpolant(p).max_check_error < 1e-6


def test_stp_invariant_to_density_and_power():
    cat = ContentCatalog(8, 2.0)
    pl = PlacementVector([0.9, 0.8, 0.6, 0.4, 0.2, 0.1, 0.0, 0.0], 3)
    base = stp_a(pl, cat, P(3))
    for kw in (dict(lambda_b=1e-4), dict(lambda_b=3.0), dict(p_b=40.0)):
        other = stp_a(pl, cat, P(3, **kw))
        assert other.aggregate == base.aggregate
        assert np.array_equal(other.per_file, base.per_file)


def test_stp_rejects_invalid_placement():
    with pytest.raises(ValueError):
        stp_a(PlacementVector([0.5] * 4, 3), ContentCatalog(4, 1.0), P())


def test_stp_monotone_in_tau_spot():
    cat = ContentCatalog(8, 2.0)
    pl = PlacementVector([0.9, 0.8, 0.6, 0.4, 0.2, 0.1, 0.0, 0.0], 3)
    vals = [stp_a(pl, cat, P(2, tau)).aggregate for tau in (0.1, 1.0, 10.0, 100.0)]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_spec_is_part_of_cache_key():
    p = P(2)
    loose = coop_terms(p, QuadratureSpec(rel_tol=1e-4))
    tight = coop_terms(p, QuadratureSpec())
    assert loose is not tight
