import math
import time

import numpy as np
import pytest
from scipy import integrate

from kpzlab.constants import (
    KernelParams,
    QuadratureError,
    QuadratureSpec,
    adaptive_simpson,
    adaptive_simpson_batch,
    cancellation_integrand,
    correction_constant,
    correction_integrand,
    discrete_zero_chaos,
    kpz_cancellation,
    renormalization_constant,
    vertex_function,
    vertex_l1_closed_form,
    vertex_V5_l1,
)
from kpzlab.noise import get_mollifier
from kpzlab.operators import Scheme, preset_sasamoto_spohn, preset_spectral, preset_standard

SS_FAMILY = [(1.0, 0.5), (0.0, 1.0), (1.0, 0.0)]


# quadrature -----------------------------------------------------------------

def test_adaptive_simpson_known_integrals():
    assert adaptive_simpson(np.sin, [0, np.pi], 1e-12) == pytest.approx(2.0, abs=1e-11)
    assert adaptive_simpson(np.sqrt, [0, 1], 1e-10) == pytest.approx(2 / 3, abs=1e-9)
    f = lambda x: np.where(x == 0, 1.0, np.sin(x) / np.where(x == 0, 1, x))  # noqa: E731
    ref = integrate.quad(f, 0, 10, epsabs=1e-13, limit=200)[0]
    assert adaptive_simpson(f, [0, 10], 1e-12) == pytest.approx(ref, abs=1e-11)
    assert adaptive_simpson(np.sin, [1.0], 1e-12) == 0.0


def test_adaptive_simpson_breakpoints_handle_jumps():
    step = lambda x: (x > 0.3).astype(float)  # noqa: E731
    assert adaptive_simpson(step, [0, 0.3, 1], 1e-12) == pytest.approx(0.7, abs=1e-14)


def test_adaptive_simpson_batch_matches_single():
    bps = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 3.0]])
    scales = np.array([1.0, 2.0, 3.0])
    got = adaptive_simpson_batch(lambda x, i: np.exp(scales[i] * x), bps, 1e-11)
    want = [(math.exp(s * b) - math.exp(s * a)) / s for s, (a, b) in zip(scales, bps)]
    np.testing.assert_allclose(got, want, rtol=1e-11)


def test_quadrature_error_carries_estimate():
    with pytest.raises(QuadratureError) as exc:
        adaptive_simpson(lambda x: 1 / np.sqrt(np.abs(x - 0.5) + 1e-300), [0, 1], 1e-14, 50)
    assert np.isfinite(exc.value.estimate)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(rule="gauss")
    with pytest.raises(ValueError):
        QuadratureSpec(abs_tol=0)
    assert QuadratureSpec(abs_tol=1e-6).refined().abs_tol == pytest.approx(1e-7)


# correction constant --------------------------------------------------------

def test_correction_constant_standard_is_one_eighth():
    t0 = time.perf_counter()
    c = correction_constant(preset_standard())
    assert time.perf_counter() - t0 < 1.0
    assert c == pytest.approx(0.125, abs=1e-8)


def test_correction_constant_standard_against_direct_formula():
    # independent coding: g = (1 - e^{-ix})/(ix), hbar = 1, h(x,-x) = 1, |g|^2 = f
    def integrand(x):
        g = (1 - np.exp(-1j * x)) / (1j * x)
        f = 2 * (1 - np.cos(x)) / x**2
        return np.imag(g) / x * abs(g) ** 2 / f**2

    ref = -integrate.quad(integrand, 1e-12, np.pi, epsabs=1e-13)[0] / (4 * np.pi)
    assert ref == pytest.approx(0.125, abs=1e-10)


@pytest.mark.parametrize("kappa,lam", SS_FAMILY)
def test_correction_constant_vanishes_for_sasamoto_spohn_family(kappa, lam):
    assert abs(correction_constant(preset_sasamoto_spohn(kappa, lam))) <= 1e-10


def test_correction_constant_spectral_and_invalid():
    assert correction_constant(preset_spectral()) == 0.0
    bad = Scheme(pi={-1: 1.0, 0: -2.0, 1: 1.0}, nu={0: 1.0, -1: -1.0}, mu={(0, 1): 1.0})
    with pytest.raises(ValueError):
        correction_constant(bad)


def test_correction_integrand_is_continuous_at_origin():
    s = preset_standard()
    x = np.array([0.0, 1e-7, 2e-6, 1e-4])
    v = correction_integrand(s, x)
    np.testing.assert_allclose(v, v[0], rtol=1e-3)


# renormalization constant ---------------------------------------------------

@pytest.mark.parametrize("N", [101, 201, 401])
def test_renormalization_constant_indicator(N):
    r = renormalization_constant("indicator", N=N)
    eps = 2 * np.pi / N
    assert r.continuum == pytest.approx(1 / (2 * np.pi * eps), rel=1e-12)
    count = np.sum(np.abs(np.arange(-(N // 2), N // 2 + 1)) * eps <= 1)
    assert r.lattice_sum == pytest.approx(count / (4 * np.pi), rel=1e-14)
    assert r.relative_gap <= 2 * eps


def test_renormalization_constant_bump_and_eps_input():
    m = get_mollifier("bump")
    sq = integrate.quad(lambda x: m(x) ** 2, -1, 1, epsabs=1e-13)[0]
    r = renormalization_constant("bump", eps_reg=0.05)
    assert r.continuum == pytest.approx(sq / (4 * np.pi * 0.05), rel=1e-9)
    assert r.N == 125
    assert r.relative_gap < 1e-6
    with pytest.raises(ValueError):
        renormalization_constant("indicator")


# vertex function ------------------------------------------------------------

def test_vertex_direct_and_dual_forms_agree():
    k = 7
    sigma = np.geomspace(2e-3, 0.05, 12)
    direct = vertex_function(sigma, k, K_trunc=4096)
    from kpzlab.constants import _vertex_dual

    np.testing.assert_allclose(_vertex_dual(sigma, k), direct, rtol=1e-9, atol=1e-12)
    assert np.all(vertex_function(sigma, 0) == 0)


@pytest.mark.parametrize("k", [1, 2, 5, 8, 16, 32, 64, 128])
def test_vertex_l1_matches_closed_form(k):
    res = vertex_V5_l1(k)
    assert res.value == pytest.approx(vertex_l1_closed_form(k), abs=1e-8)
    assert res.tail_estimate <= 1e-10


def test_vertex_closed_form_against_scipy():
    # direct quad of the truncated k2-sum at a small k
    k = 3
    val = integrate.quad(lambda s: vertex_function(s, k, 512)[0], 0, 40, limit=400,
                         points=[0.01, 0.1, 1.0], epsabs=1e-11)[0]
    assert val == pytest.approx(vertex_l1_closed_form(k), abs=1e-7)


def test_vertex_ratio_nonincreasing():
    ks = [8, 16, 32, 64, 128]
    ratios = [vertex_V5_l1(k).value / k**0.25 for k in ks]
    assert all(b <= a for a, b in zip(ratios, ratios[1:]))


def test_vertex_symmetry_and_params():
    assert vertex_V5_l1(-9).value == pytest.approx(vertex_V5_l1(9).value, rel=1e-10)
    assert vertex_V5_l1(0).value == 0.0
    with pytest.raises(ValueError):
        KernelParams(K_trunc=10)
    with pytest.raises(ValueError):
        KernelParams(T_trunc=0)


# zero chaos -----------------------------------------------------------------

def test_zero_chaos_standard_converges_to_c():
    vals = [discrete_zero_chaos(preset_standard(), N, 1.0) for N in (255, 511, 1023)]
    gaps = [abs(v - 0.125) for v in vals]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 0.05 * 0.125


def test_zero_chaos_against_direct_sum():
    N, t = 101, 0.5
    eps = 2 * np.pi / N
    k = np.arange(1, 51)
    x = eps * k
    g = (1 - np.exp(-1j * x)) / (1j * x)
    f = 2 * (1 - np.cos(x)) / x**2
    terms = np.imag(g) / x * abs(g) ** 2 / (2 * f**2) * (1 - np.exp(-2 * k**2 * f * t))
    ref = -eps * terms.sum() / (2 * np.pi)
    assert discrete_zero_chaos(preset_standard(), N, t) == pytest.approx(ref, rel=1e-13)


def test_zero_chaos_edge_cases():
    assert discrete_zero_chaos(preset_standard(), 63, 0.0) == 0.0
    assert abs(discrete_zero_chaos(preset_sasamoto_spohn(), 255, 1.0)) < 1e-12
    with pytest.raises(ValueError):
        discrete_zero_chaos(preset_standard(), 63, -1.0)


# KPZ cancellation -----------------------------------------------------------

def _midpoint_oracle(n):
    # independent coding of the limit integrand for the bump on an offset grid
    def phi2(x):
        out = np.zeros_like(x)
        i = np.abs(x) < 1
        out[i] = np.exp(2 - 2 / (1 - x[i] ** 2))
        return out

    h = 4 / n
    k1 = -2 + h * (np.arange(n) + 0.5)
    k2 = -2 + h * (np.arange(n) + 1 / 3)
    K1, K2 = np.meshgrid(k1, k2, indexing="ij")
    K12 = K1 + K2
    num = phi2(K1) * (phi2(K12) - phi2(K2)) \
        + 0.5 * phi2(K12) * (K2 - K1) * (phi2(K1) - phi2(-K2)) / K12
    return -2 * np.sum(num / (K1**2 + K2**2 + K12**2)) * h * h


def test_cancellation_bump_matches_riemann_oracle():
    res = kpz_cancellation("bump")
    oracle = (4 * _midpoint_oracle(1600) - _midpoint_oracle(800)) / 3
    assert res.regularized_limit == pytest.approx(oracle, rel=1e-6)
    assert res.relative_change < 1e-6
    assert abs(res.symmetric_zero) <= 1e-12 * res.scale


def test_cancellation_symmetric_sum_vanishes():
    from kpzlab.constants import _cancellation_sums

    for K in (8, 32, 64):
        a, b = _cancellation_sums(K)
        assert a > 0
        assert abs(a + b) <= 1e-12 * a


def test_cancellation_integrand_removable_line():
    m = get_mollifier("bump")
    k1 = np.array([0.3, 0.3, 0.3])
    k2 = np.array([-0.3, -0.3 + 1e-9, -0.3 + 1e-4])
    v = cancellation_integrand(m, k1, k2)
    assert np.all(np.isfinite(v))
    np.testing.assert_allclose(v[1], v[0], atol=1e-6)
    np.testing.assert_allclose(v[2], v[0], atol=1e-3)
    assert cancellation_integrand(m, 0.0, 0.0) == 0.0


def test_standard_correction_integrand_is_constant():
    x = np.linspace(np.pi / 100, np.pi, 100)
    np.testing.assert_allclose(correction_integrand(preset_standard(), x), -0.5, atol=1e-12)


def test_correction_constant_converges_under_refinement():
    s = Scheme(pi={-2: 0.1, -1: 0.6, 0: -1.4, 1: 0.6, 2: 0.1}, nu={1: 0.5, -1: -0.5},
               mu={(0, 0): 0.5, (1, 1): 0.5})
    ref = correction_constant(s, QuadratureSpec(abs_tol=1e-14))
    assert abs(ref) > 1e-3
    errs = [abs(correction_constant(s, QuadratureSpec(abs_tol=t)) - ref)
            for t in (1e-4, 1e-6, 1e-8, 1e-10)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-10


def test_renormalization_constant_large_eps_keeps_only_mode_zero():
    r = renormalization_constant("indicator", eps_reg=10.0)
    assert r.N == 1
    assert r.lattice_sum == pytest.approx(1 / (4 * np.pi))


def test_cancellation_of_zero_mollifier_is_zero():
    from kpzlab.noise import Mollifier

    zero = Mollifier("zero", lambda x: np.zeros_like(np.asarray(x, dtype=float)), 1.0,
                     lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    res = kpz_cancellation(zero)
    assert res.regularized_limit == 0.0 and res.refined_limit == 0.0
