import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpzlab.dynamics import SimConfig, run
from kpzlab.grid import TWO_PI, GridSpec, SpectralField, dft_inverse
from kpzlab.noise import (
    BLOCK,
    EnsembleNoise,
    Mollifier,
    NoiseStream,
    apply_mollifier,
    get_mollifier,
    invariant_sample,
    mollifier_weights,
    ou_coeffs,
    ou_variance,
    stationary_ou_init,
    white_coeffs,
    white_increment,
)
from kpzlab.operators import (
    Scheme,
    preset_sasamoto_spohn,
    preset_spectral,
    preset_standard,
    validate,
)


def test_stream_is_addressable_and_order_free():
    s = NoiseStream(7, 3)
    a = s.normals_at(130, 11)
    s.normals_at(2, 11)
    np.testing.assert_array_equal(s.normals_at(130, 11), a)
    np.testing.assert_array_equal(NoiseStream(7, 3).normals_at(130, 11), a)
    assert not np.array_equal(NoiseStream(7, 4).normals_at(130, 11), a)
    assert not np.array_equal(NoiseStream(8, 3).normals_at(130, 11), a)
    assert not np.array_equal(s.normals_at(131, 11), a)


def test_next_advances_counter():
    s = NoiseStream(1)
    first = s.next(5)
    second = s.next(5)
    assert s.counter == 2
    np.testing.assert_array_equal(first, NoiseStream(1).normals_at(0, 5))
    np.testing.assert_array_equal(second, NoiseStream(1).normals_at(1, 5))
    with pytest.raises(ValueError):
        s.normals_at(-1, 5)


def test_bulk_draws_are_reproducible_and_distinct_from_steps():
    a = NoiseStream(2, 1).bulk((4, 6))
    np.testing.assert_array_equal(a, NoiseStream(2, 1).bulk((4, 6)))
    assert not np.allclose(a[0], NoiseStream(2, 1).normals_at(0, 6))


def test_ensemble_stacks_replica_streams():
    streams = [NoiseStream(3, r) for r in range(4)]
    ens = EnsembleNoise(streams)
    for step in (0, BLOCK - 1, BLOCK, 3 * BLOCK + 5):
        z = ens.normals_at(step, 9)
        assert z.shape == (4, 9)
        for r in range(4):
            np.testing.assert_array_equal(z[r], NoiseStream(3, r).normals_at(step, 9))


def test_spawned_stream_matches_fresh_one():
    np.testing.assert_array_equal(NoiseStream(5, 0).spawn(9).next(4), NoiseStream(5, 9).next(4))


def test_stream_normals_are_standard():
    z = NoiseStream(11).bulk(200_000)
    assert abs(z.mean()) < 5 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / z.size)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 30), seed=st.integers(0, 2**31))
def test_white_coefficients_are_hermitian(n, seed):
    g = GridSpec(2 * n + 1)
    f = white_increment(g, 0.01, NoiseStream(seed))
    assert f.hermitian_defect() == 0.0
    assert f[0].imag == 0.0
    assert np.all(np.isreal(dft_inverse(f).values))


def test_white_coefficients_variance_per_mode():
    g, dt = GridSpec(15), 0.01
    z = NoiseStream(4).bulk((20_000, 15))
    c = white_coeffs(z, g, dt)
    ratio = np.mean(np.abs(c) ** 2, axis=0) / (TWO_PI * dt)
    np.testing.assert_allclose(ratio, 1.0, atol=0.05)
    # real and imaginary parts of a nonzero mode each carry half
    np.testing.assert_allclose(np.var(c[:, g.K + 3].real) / (np.pi * dt), 1.0, atol=0.05)


def test_white_increment_site_variance_is_dt_over_eps():
    g, dt = GridSpec(21), 0.003
    c = white_coeffs(NoiseStream(5).bulk((20_000, 21)), g, dt)
    v = dft_inverse(SpectralField(g, c, True)).values
    np.testing.assert_allclose(v.var(axis=0) * g.eps / dt, 1.0, atol=0.06)
    # independent across sites
    assert abs(np.mean(v[:, 0] * v[:, 1])) * g.eps / dt < 0.05


def test_white_coeffs_reject_nonpositive_dt():
    with pytest.raises(ValueError):
        white_coeffs(np.zeros(5), GridSpec(5), 0.0)


def test_mollifiers():
    ind, bump = get_mollifier("indicator"), get_mollifier("bump")
    np.testing.assert_array_equal(ind(np.array([-1.0, 0.0, 1.0, 1.0001])), [1, 1, 1, 0])
    assert bump(0.0) == 1.0 and bump(1.0) == 0.0 and bump(-1.5) == 0.0
    x = np.linspace(-0.95, 0.95, 41)
    d = 1e-6
    np.testing.assert_allclose(bump.derivative(x), (bump(x + d) - bump(x - d)) / (2 * d),
                               atol=1e-7)
    np.testing.assert_array_equal(ind.derivative(x), 0.0)
    assert get_mollifier(ind) is ind
    with pytest.raises(ValueError):
        get_mollifier("gauss")


def test_mollifier_weights_and_application():
    g = GridSpec(21)
    w = mollifier_weights("indicator", g, 0.25)
    np.testing.assert_array_equal(w, (np.abs(g.modes) <= 4).astype(float))
    f = SpectralField(g, np.ones(21), True)
    np.testing.assert_array_equal(apply_mollifier("indicator", f, 0.25).coeff, w)
    custom = Mollifier("half", lambda x: 0.5 * np.ones_like(x))
    np.testing.assert_array_equal(mollifier_weights(custom, g, 1.0), 0.5)


def test_ou_variance_closed_form():
    g = GridSpec(31)
    k = g.modes
    x = g.eps * k
    s = preset_standard()
    var = ou_variance(g, s)
    assert var[g.K] == 0.0
    nz = k != 0
    expected = np.pi * np.abs((1 - np.exp(-1j * x[nz])) / (1j * x[nz])) ** 2 \
        / (2 * (1 - np.cos(x[nz])) / x[nz] ** 2)
    np.testing.assert_allclose(var[nz], expected, rtol=1e-12)
    # |g|^2 = f for the standard pair, so the variance is flat
    np.testing.assert_allclose(var[nz], np.pi, rtol=1e-12)
    np.testing.assert_allclose(ou_variance(g, preset_spectral())[nz], np.pi)


def test_ou_coefficients_have_target_variance():
    g, s = GridSpec(15), preset_standard()
    c = ou_coeffs(NoiseStream(6).bulk((20_000, 15)), g, s)
    emp = np.mean(np.abs(c) ** 2, axis=0)
    var = ou_variance(g, s)
    np.testing.assert_allclose(emp[var > 0] / var[var > 0], 1.0, atol=0.05)


def test_ou_variance_matches_long_linear_simulation():
    # independent oracle: evolve the linear equation from 0 and read off the
    # stationary spectrum; the exponential integrator samples the OU law exactly
    g = GridSpec(15)
    s = Scheme(pi={-2: 0.1, -1: 0.6, 0: -1.4, 1: 0.6, 2: 0.1}, nu={1: 0.5, -1: -0.5},
               mu={(0, 0): 1.0})
    assert validate(s).ok
    cfg = SimConfig(g, s, dt=0.01, t_end=8.0, nonlinear=False)
    R = 1000
    traj = run(cfg, SpectralField(g, np.zeros((R, 15)), True),
               [NoiseStream(12, r) for r in range(R)])
    emp = np.mean(np.abs(traj.final.coeff) ** 2, axis=0)
    var = ou_variance(g, s)
    nz = g.modes != 0
    # 1000 samples: relative standard error about 3.2% per mode
    np.testing.assert_allclose(emp[nz] / var[nz], 1.0, atol=0.15)
    assert abs(np.mean(emp[nz] / var[nz]) - 1) < 0.04
    assert not np.allclose(var[nz], var[nz][0])


def test_stationary_ou_init_requires_positive_f():
    g = GridSpec(9)
    f = stationary_ou_init(g, preset_standard(), NoiseStream(0))
    assert f.real_flag and f.hermitian_defect() == 0.0
    bad = Scheme(pi={-2: 0.25, 0: -0.5, 2: 0.25}, nu=None, mu={(0, 0): 1.0})
    with pytest.raises(ValueError):
        stationary_ou_init(g, bad, NoiseStream(0))


def test_invariant_sample_moments():
    g = GridSpec(63)
    x = np.stack([invariant_sample(g, 2.0, NoiseStream(9, r)).values for r in range(400)])
    var = 0.5 / g.eps
    assert abs(x.mean() - 2.0) < 4 * np.sqrt(var / x.size)
    assert abs(x.var() / var - 1) < 4 * np.sqrt(2 / x.size)


def test_sasamoto_spohn_ou_variance_positive():
    var = ou_variance(GridSpec(31), preset_sasamoto_spohn())
    assert np.all(var[np.arange(31) != 15] > 0)
