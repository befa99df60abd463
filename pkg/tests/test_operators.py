import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpzlab.grid import GridSpec, LatticeField, SpectralField, dft_forward, dft_inverse
from kpzlab.operators import (
    PRESETS,
    Scheme,
    apply_bilinear,
    apply_derivative,
    apply_laplacian,
    bilinear_stencil,
    derivative_symbol,
    laplacian_symbol,
    lattice_inner,
    preset_sasamoto_spohn,
    preset_spectral,
    preset_standard,
    stencil_derivative,
    stencil_laplacian,
    validate,
)

STENCIL_SCHEMES = [preset_standard(), preset_sasamoto_spohn(), preset_sasamoto_spohn(0, 1),
                   preset_sasamoto_spohn(1, 0)]


def random_field(N, seed, batch=()):
    g = GridSpec(N)
    u = np.random.default_rng(seed).standard_normal(batch + (N,))
    return g, u, dft_forward(LatticeField(g, u))


def test_presets_validate():
    for name, make in PRESETS.items():
        rep = validate(make())
        assert rep.ok, (name, rep.failures())
    assert validate(preset_standard()).c_f == pytest.approx(4 / np.pi**2, rel=1e-6)


def test_validation_reports_failures_without_raising():
    # a Laplacian on the 2-step lattice: f vanishes at x = pi
    odd = Scheme(pi={-2: 0.25, 0: -0.5, 2: 0.25}, nu={0: 1.0, -1: -1.0}, mu={(0, 0): 1.0})
    rep = validate(odd)
    assert not rep.h_f and rep.h_g and rep.h_h
    assert "H_f:f_positive" in rep.failures()
    bad = Scheme(pi={-1: 1.0, 0: -1.0, 1: 1.0}, nu={0: 2.0}, mu={(0, 1): 1.0})
    rep = validate(bad)
    assert set(rep.failures()) >= {"H_f:mass_zero", "H_g:mass_zero", "H_h:symmetric"}
    assert not rep.as_dict()["ok"]


def test_symbols_of_standard_scheme():
    s = preset_standard()
    x = np.linspace(-np.pi, np.pi, 100)
    np.testing.assert_allclose(s.f(x), 2 * (1 - np.cos(x)) / x**2, rtol=1e-11)
    np.testing.assert_allclose(s.g(x), (1 - np.exp(-1j * x)) / (1j * x), rtol=1e-13)
    np.testing.assert_allclose(s.f(0.0), 1.0)
    np.testing.assert_allclose(s.g(0.0), 1.0)
    np.testing.assert_allclose(s.h(0.3, -0.7), 1.0)


def test_symbol_slopes_match_finite_differences():
    for s in STENCIL_SCHEMES:
        g1, h1 = s.symbol_slopes()
        d = 1e-6
        np.testing.assert_allclose(g1, (s.g(d) - s.g(-d)) / (2 * d), atol=1e-8)
        np.testing.assert_allclose(h1, (s.hbar(d) - s.hbar(-d)) / (2 * d), atol=1e-8)


def test_spectral_scheme_is_exact_band_multiplier():
    g = GridSpec(15)
    s = preset_spectral()
    np.testing.assert_allclose(laplacian_symbol(s, g), -g.modes.astype(float) ** 2)
    np.testing.assert_allclose(derivative_symbol(s, g), 1j * g.modes)
    with pytest.raises(ValueError):
        stencil_laplacian(s, np.zeros(15), g.eps)
    with pytest.raises(ValueError):
        stencil_derivative(s, np.zeros(15), g.eps)


def test_scheme_serialization_roundtrip():
    for s in STENCIL_SCHEMES + [preset_spectral()]:
        assert Scheme.from_json(s.to_json()) == s
    with pytest.raises(ValueError):
        Scheme.from_dict({"pi": None, "nu": None, "mu": [[0, 0, 1.0]], "extra": 1})


def test_sasamoto_spohn_rejects_degenerate_parameters():
    with pytest.raises(ValueError):
        preset_sasamoto_spohn(0, 0)
    with pytest.raises(ValueError):
        preset_sasamoto_spohn(-1, 1)


@pytest.mark.parametrize("N", [15, 31, 63])
def test_spectral_operators_equal_stencils(N):
    g, u, f = random_field(N, N, (2,))
    for s in STENCIL_SCHEMES:
        lap = dft_inverse(apply_laplacian(s, f)).values
        der = dft_inverse(apply_derivative(s, f)).values
        scale = np.max(np.abs(u)) / g.eps**2
        np.testing.assert_allclose(lap, stencil_laplacian(s, u, g.eps), atol=1e-12 * scale)
        np.testing.assert_allclose(der, stencil_derivative(s, u, g.eps), atol=1e-12 * scale)


def test_sasamoto_spohn_bilinear_matches_hand_formula():
    kappa, lam = 1.0, 0.5
    s = preset_sasamoto_spohn(kappa, lam)
    rng = np.random.default_rng(5)
    p, q = rng.standard_normal((2, 17))
    p1, q1 = np.roll(p, -1), np.roll(q, -1)
    hand = (kappa * p * q + lam * (p * q1 + p1 * q) + kappa * p1 * q1) / (2 * (kappa + lam))
    np.testing.assert_allclose(bilinear_stencil(s, p, q), hand, rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 20), seed=st.integers(0, 2**31), which=st.integers(0, 3))
def test_bilinear_fast_equals_folded_convolution(n, seed, which):
    N = 2 * n + 1
    s = STENCIL_SCHEMES[which]
    g, u, f = random_field(N, seed)
    _, v, h = random_field(N, seed + 1)
    fast = apply_bilinear(s, f, h).coeff
    ref = apply_bilinear(s, f, h, method="reference").coeff
    np.testing.assert_allclose(fast, ref, atol=1e-11 * np.max(np.abs(ref)))


def test_bilinear_rejects_bad_input():
    g, _, f = random_field(7, 0)
    _, _, h = random_field(9, 0)
    with pytest.raises(ValueError):
        apply_bilinear(preset_standard(), f, h)
    with pytest.raises(ValueError):
        apply_bilinear(preset_standard(), f, f, method="slow")


@pytest.mark.parametrize("N", [15, 31, 63])
def test_conservation_identity_sasamoto_spohn(N):
    s = preset_sasamoto_spohn()
    g = GridSpec(N)
    phi = np.random.default_rng(N).standard_normal((100, N))
    d = stencil_derivative(s, bilinear_stencil(s, phi, phi), g.eps)
    scale = lattice_inner(np.abs(phi), np.abs(d))
    assert np.max(np.abs(lattice_inner(phi, d)) / scale) <= 1e-11


def test_conservation_fails_off_the_sasamoto_spohn_point():
    # c = 0 holds for the whole family, energy conservation only at kappa = 2 lambda
    s = preset_sasamoto_spohn(1.0, 0.0)
    g = GridSpec(31)
    phi = np.random.default_rng(0).standard_normal(31)
    d = stencil_derivative(s, bilinear_stencil(s, phi, phi), g.eps)
    assert abs(lattice_inner(phi, d)) > 1e-3 * lattice_inner(np.abs(phi), np.abs(d))


def test_lattice_inner():
    g = GridSpec(9)
    np.testing.assert_allclose(lattice_inner(np.ones(9), np.ones(9)), 2 * np.pi)
    np.testing.assert_allclose(lattice_inner(np.cos(g.sites), np.cos(g.sites)), np.pi)
