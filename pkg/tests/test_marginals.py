import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrisk.marginals import (Cauchy, ExpectationEngine, Gaussian, MarginalLaw, UnboundedFunctional, expect_gw,
                             prob_nonzero, sample)
from mrisk.scalar_convex import abs_loss

MIX = MarginalLaw.sparse(0.1)
MIX3 = MarginalLaw.sparse(0.3)
ENG = ExpectationEngine()


def test_construction_validates_weights():
    with pytest.raises(ValueError):
        MarginalLaw(atoms=((0.0, 0.5),), continuous=())
    with pytest.raises(ValueError):
        MarginalLaw(atoms=((0.0, 1.2), (1.0, -0.2)), continuous=())


def test_config_round_trip_and_shorthand():
    law = MarginalLaw(atoms=((0.0, 0.6), (2.0, 0.1)),
                      continuous=((Gaussian(0.5, 2.0), 0.2), (Cauchy(0.0, 3.0), 0.1)))
    assert MarginalLaw.from_config(law.to_config()) == law
    cfg = {"atoms": [{"at": 0.0, "w": 0.9}], "continuous": [{"gaussian": {"mean": 0, "sd": 1}, "w": 0.1}]}
    assert MarginalLaw.from_config(cfg) == MIX
    assert MarginalLaw.from_config("sparse:0.1") == MIX
    assert MarginalLaw.from_config("sparse:0.2:cauchy") == MarginalLaw.sparse(0.2, "cauchy")
    assert MarginalLaw.from_config("normal") == MarginalLaw.normal()
    with pytest.raises(ValueError):
        MarginalLaw.from_config("uniform")


def test_expect_gw_examples():
    v, e = ENG.expect_gw(MIX, lambda g, w: g * g)
    assert v == pytest.approx(1.0, abs=1e-12)
    v, _ = ENG.expect_gw(MIX, lambda g, w: w * w)
    assert v == pytest.approx(0.1, abs=1e-12)
    v, _ = expect_gw(ENG, MIX3, lambda g, w: (g + w) ** 2)
    assert v == pytest.approx(1.3, abs=1e-12)


def test_expect_gw_matches_monte_carlo():
    # independent oracle: 10^7 plain Monte Carlo draws of (G, W)
    rng = np.random.default_rng(12345)
    n = 10_000_000
    g = rng.standard_normal(n)
    w = np.where(rng.random(n) < 0.3, rng.standard_normal(n), 0.0)
    phi = lambda g, w: np.abs(0.7 * g + w) * np.cos(g)
    mc = phi(g, w)
    v, _ = ENG.expect_gw(MIX3, phi, alpha=0.7, kinks=[0.0])
    assert abs(v - mc.mean()) <= 4 * mc.std() / math.sqrt(n)


def test_sample_examples():
    np.testing.assert_array_equal(sample(MarginalLaw.point_mass(), 5, seed=3), np.zeros(5))
    x = sample(MIX, 1_000_000, seed=7)
    assert abs(np.mean(x == 0) - 0.9) <= 0.001
    np.testing.assert_array_equal(sample(MIX, 1000, seed=11), sample(MIX, 1000, seed=11))
    assert not np.array_equal(sample(MIX, 1000, seed=11), sample(MIX, 1000, seed=12))


def test_prob_nonzero_examples():
    assert prob_nonzero(MarginalLaw.point_mass()) == 0.0
    assert prob_nonzero(MIX) == pytest.approx(0.1)
    for s in (0.1, 0.25, 0.6):
        assert prob_nonzero(MarginalLaw.sparse(s, "cauchy")) == pytest.approx(s)


def test_second_moment_and_tails():
    assert MIX.second_moment() == pytest.approx(0.1)
    assert MarginalLaw.sparse(0.1, "cauchy").second_moment() == math.inf
    # P(|W| > q) = 0.1 * 2 * Phi(-q) for the 0.9/0.1 mixture
    q = MIX.quantile_abs(0.05)
    assert MIX.tail_abs(q) == pytest.approx(0.05, abs=1e-9)
    assert q == pytest.approx(0.6744897501960817, abs=1e-8)
    assert MIX.quantile_abs(0.5) == 0.0


def test_scaled_law():
    law = MarginalLaw.sparse(0.2, "cauchy").scaled(3.0)
    assert law.continuous[0][0] == Cauchy(0.0, 3.0)
    assert MIX.scaled(2.0).second_moment() == pytest.approx(0.4)


@pytest.mark.parametrize("law", [MarginalLaw.normal(), MarginalLaw.normal(0.5, 2.0), MIX,
                                 MarginalLaw(((1.0, 0.3),), ((Gaussian(-1.0, 0.5), 0.7),))])
def test_polynomial_moments_exact(law):
    # E[G^a W^b] = E[G^a] E[W^b], with exact moments of the mixture
    def w_moment(k):
        out = sum(wt * a ** k for a, wt in law.atoms)
        for c, wt in law.continuous:
            # moments of N(m, s^2) from the Hermite recursion
            m, s = c.mean, c.sd
            mom = [1.0, m]
            for j in range(2, k + 1):
                mom.append(m * mom[j - 1] + (j - 1) * s * s * mom[j - 2])
            out += wt * mom[k]
        return out

    g_mom = [1, 0, 1, 0, 3]
    for a in range(5):
        for b in range(5 - a):
            v, _ = ENG.expect_gw(law, lambda g, w: g ** a * w ** b, alpha=0.5)
            assert v == pytest.approx(g_mom[a] * w_moment(b), abs=1e-10)


def test_doubling_nodes_within_error():
    f = abs_loss()
    phi = lambda g, w: f.moreau_env(0.8 * g + w, 0.6)
    kinks = f.prox_kinks(0.6)
    v1, e1 = ExpectationEngine(gh_nodes=61).expect_gw(MIX3, phi, alpha=0.8, kinks=kinks)
    v2, _ = ExpectationEngine(gh_nodes=122).expect_gw(MIX3, phi, alpha=0.8, kinks=kinks)
    assert abs(v1 - v2) <= e1


def test_monte_carlo_is_worker_independent():
    law = MarginalLaw.sparse(0.3, "cauchy")
    phi = lambda g, w: np.tanh(g + w)
    one = ExpectationEngine(mc_samples=300_000, workers=1, cauchy_method="mc").expect_gw(law, phi, alpha=1.0,
                                                                                          bounded=True)
    four = ExpectationEngine(mc_samples=300_000, workers=4, cauchy_method="mc").expect_gw(law, phi, alpha=1.0,
                                                                                           bounded=True)
    assert one.value == four.value and one.error == four.error


def test_monte_carlo_seeded():
    law = MarginalLaw.sparse(0.3, "cauchy")
    phi = lambda g, w: np.tanh(g + w) + g * np.sign(w)
    mc = dict(mc_samples=200_000, cauchy_method="mc")
    a = ExpectationEngine(master_seed=1, **mc).expect_gw(law, phi, bounded=True)
    b = ExpectationEngine(master_seed=1, **mc).expect_gw(law, phi, bounded=True)
    c = ExpectationEngine(master_seed=2, **mc).expect_gw(law, phi, bounded=True)
    assert a == b and a.value != c.value
    # true value is 0.7 E[tanh G] + 0.3 E[tanh(G + W)] = 0 by symmetry
    assert abs(a.value) <= a.error


def test_cauchy_nested_quadrature_matches_monte_carlo():
    # independent oracle: 10^7 plain Monte Carlo draws with a Cauchy component
    rng = np.random.default_rng(777)
    n = 10_000_000
    g = rng.standard_normal(n)
    w = np.where(rng.random(n) < 0.3, rng.standard_cauchy(n), 0.0)
    f = abs_loss()
    phi = lambda g, w: f.env_deriv(0.6 * g + w, 0.8) * g
    mc = phi(g, w)
    law = MarginalLaw.sparse(0.3, "cauchy")
    v, e = ENG.expect_gw(law, phi, alpha=0.6, kinks=f.prox_kinks(0.8), bounded=True)
    assert abs(v - mc.mean()) <= 4 * mc.std() / math.sqrt(n)
    assert e < 1e-8


def test_centered_cauchy_integrand():
    # E[env(cG + W) - |W|] pairs both terms inside the heavy-tailed component
    rng = np.random.default_rng(778)
    n = 10_000_000
    g = rng.standard_normal(n)
    w = np.where(rng.random(n) < 0.3, rng.standard_cauchy(n), 0.0)
    f = abs_loss()
    d = f.moreau_env(0.5 * g + w, 0.7) - np.abs(w)
    law = MarginalLaw.sparse(0.3, "cauchy")
    for eng in (ENG, ExpectationEngine(cauchy_method="mc", mc_samples=1_000_000)):
        v, e = eng.expect_gw(law, lambda g, w: f.moreau_env(0.5 * g + w, 0.7), alpha=0.5, kinks=f.prox_kinks(0.7),
                             bounded=True, center=f.value, center_kinks=f.breakpoints)
        assert abs(v - d.mean()) <= 4 * d.std() / math.sqrt(n) + e


def test_cauchy_needs_bounded_flag():
    law = MarginalLaw.sparse(0.1, "cauchy")
    with pytest.raises(UnboundedFunctional):
        ENG.expect_gw(law, lambda g, w: w * w)
    with pytest.raises(UnboundedFunctional):
        ENG.expect_w(law, lambda w: w * w)


def test_expect_w_cauchy_quadrature():
    # E[min(|W|, 1)] = P(|W| > 1) + 2 int_0^1 x / (pi (1 + x^2)) dx = 1/2 + log(2)/pi
    law = MarginalLaw(continuous=((Cauchy(0.0, 1.0), 1.0),), atoms=())
    v, e = ENG.expect_w(law, lambda w: np.minimum(np.abs(w), 1.0), kinks=[-1.0, 0.0, 1.0], bounded=True)
    exact = math.log(2) / math.pi + 0.5
    assert v == pytest.approx(exact, abs=1e-10)
    assert e < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.1, 5.0))
def test_prob_nonzero_sparse(s, scale):
    law = MarginalLaw.sparse(s, "gaussian", scale)
    assert law.prob_nonzero() == pytest.approx(s)
    assert law.second_moment() == pytest.approx(s * scale * scale)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.05, 5.0))
def test_envelope_expectation_is_stable_in_nodes(alpha, tau):
    f = abs_loss()
    phi = lambda g, w: f.env_deriv(alpha * g + w, tau) ** 2
    kinks = f.prox_kinks(tau)
    v1, e1 = ExpectationEngine(gh_nodes=61).expect_gw(MIX3, phi, alpha=alpha, kinks=kinks)
    v2, _ = ExpectationEngine(gh_nodes=91).expect_gw(MIX3, phi, alpha=alpha, kinks=kinks)
    assert abs(v1 - v2) <= max(e1, 1e-12)
