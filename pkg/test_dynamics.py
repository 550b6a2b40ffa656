"""
Tests for dynamics: run configuration, Galerkin/mollified right-hand sides,
the integrating-factor RK4 step and full runs.
Run with: python test_dynamics.py
"""

import math
import sys

import numpy as np

from dynamics import (
    BlowUpError, ConfigError, Scheme, SolverConfig, cutoff_for_mode_count, galerkin_mask,
    galerkin_rhs, galerkin_truncate, mollified_rhs, run, step,
)
from spectral_core import (
    TWO_PI_CUBED, SpectralField, k_squared, make_field, nonlinear_term, sobolev_norms,
)
from test_spectral_core import convolution_oracle, random_field


def config(**overrides) -> SolverConfig:
    values = {'N': 8, 'scheme': 'galerkin', 'cutoff': 2.0, 'dt': 1e-3, 'T': 0.1,
              'datum': 'taylor_green:1', 'sample_every': 10}
    values.update(overrides)
    return SolverConfig(**values).validate()


def expect_config_error(key, **overrides):
    try:
        config(**overrides)
    except ConfigError as e:
        assert key in e.keys, f"{key} not named in {e.keys}"
        return
    raise AssertionError(f"{overrides} accepted")


def rel_diff(a: SpectralField, b: SpectralField) -> float:
    scale = max(1e-300, float(np.max(np.abs(b.coeffs))))
    return float(np.max(np.abs(a.coeffs - b.coeffs))) / scale


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_config_validation():
    expect_config_error('dt', dt=0.0)
    expect_config_error('dt', dt=float('nan'))
    expect_config_error('T', T=0.1005)
    expect_config_error('cutoff', cutoff=3.0)            # > N/3
    expect_config_error('m', scheme='mollified', cutoff=None, m=0.5)
    expect_config_error('scheme', scheme='spectral_element')
    expect_config_error('datum', datum='vortex_ring')
    expect_config_error('eta', eta=0.0)
    expect_config_error('N', N=7)
    print("✅ invalid configurations name the offending key")


def test_config_from_mapping():
    try:
        SolverConfig.from_mapping({'N': '8', 'cutof': '2'})
    except ConfigError as e:
        assert 'cutof' in e.keys
    else:
        raise AssertionError("unknown key accepted")
    try:
        SolverConfig.from_mapping({'cutoff': '2'})
    except ConfigError as e:
        assert 'N' in e.keys
    else:
        raise AssertionError("missing N accepted")

    cfg = SolverConfig.from_mapping({'N': '16', 'scheme': 'mollified', 'm': '4', 'dt': '0.002',
                                     'T': '0.5', 'snapshot_times': '0,0.25', 'field_archive': 'yes'})
    assert cfg.snapshot_times == (0.0, 0.25) and cfg.field_archive
    assert SolverConfig.from_mapping(cfg.to_mapping()) == cfg
    print("✅ key=value configs parse and echo round-trips")


def test_mode_count_cutoff():
    # six wavevectors with |k| = 1, two divergence-free modes each
    assert cutoff_for_mode_count(1, 16) == 1.0
    assert cutoff_for_mode_count(12, 16) == 1.0
    assert math.isclose(cutoff_for_mode_count(13, 16), math.sqrt(2.0))
    cfg = config(cutoff=None, modes=12)
    assert cfg.resolved_cutoff() == 1.0
    assert int(np.sum(galerkin_mask(16, 1.0))) == 6
    print("✅ mode counts map to Galerkin cutoffs")


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def test_galerkin_rhs():
    N = 8
    assert galerkin_rhs(SpectralField.zeros(N), 2.0).is_zero()

    kol = make_field('kolmogorov:1', N)
    for cutoff in (1.0, 2.0):
        assert rel_diff(galerkin_rhs(kol, cutoff), -kol) <= 1e-13

    tg = make_field('taylor_green:1', N)
    mask = galerkin_mask(N, 2.0)
    expected = (-k_squared(N) * tg.coeffs - convolution_oracle(tg, tg)) * mask
    got = galerkin_rhs(tg, 2.0).coeffs
    assert np.max(np.abs(got - expected)) <= 1e-12

    try:
        galerkin_rhs(random_field(N, 1), 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("field outside the cutoff accepted")
    print("✅ Galerkin right-hand side matches -|k|²c - P(c·∇c) on the ball")


def test_mollified_rhs():
    N = 8
    assert mollified_rhs(SpectralField.zeros(N), 2.0).is_zero()
    kol = make_field('kolmogorov:1', N)
    for m in (1.0, 4.0):
        assert rel_diff(mollified_rhs(kol, m), -kol) <= 1e-13

    v = random_field(N, 8)
    limit = SpectralField(-k_squared(N) * v.coeffs) - nonlinear_term(v, v)
    assert rel_diff(mollified_rhs(v, 1e8), limit) <= 1e-12
    try:
        mollified_rhs(v, 0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("m < 1 accepted")
    print("✅ mollified right-hand side tends to Navier-Stokes as m grows")


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def test_step_linear_modes():
    N = 8
    scheme = Scheme.galerkin(2.0)
    assert step(SpectralField.zeros(N), 0.0, 1e-3, scheme).is_zero()
    kol = make_field('kolmogorov:1', N)
    for dt in (1e-3, 0.1):
        assert rel_diff(step(kol, 0.0, dt, scheme), kol * math.exp(-dt)) <= 1e-13
    try:
        step(kol, 0.0, 0.0, scheme)
    except ValueError:
        pass
    else:
        raise AssertionError("dt = 0 accepted")
    print("✅ single-mode decay reproduced to round-off for any dt")


def test_step_keeps_invariants():
    N = 8
    u = galerkin_truncate(random_field(N, 3), 2.0)
    for scheme in (Scheme.galerkin(2.0), Scheme.mollified(2.0)):
        v = u
        for n in range(5):
            v = step(v, n * 0.01, 0.01, scheme)
            assert v.divergence_residual() <= 1e-13
            assert v.hermitian_residual() <= 1e-13
            assert v.mean_residual() == 0.0
        if scheme.kind == 'galerkin':
            assert not np.any(v.coeffs * ~galerkin_mask(N, 2.0))
    print("✅ steps stay divergence-free, Hermitian and inside the mode set")


def test_step_non_finite_state():
    bad = SpectralField.zeros(8).coeffs.copy()
    bad[0, 1, 0, 0] = np.nan
    try:
        step(SpectralField(bad), 0.5, 1e-3, Scheme.galerkin(2.0))
    except BlowUpError as e:
        assert e.t == 0.5
    else:
        raise AssertionError("NaN state stepped")
    print("✅ non-finite state raises BlowUpError")


def test_step_fourth_order():
    N = 8
    scheme = Scheme.galerkin(2.0)
    u0 = make_field('taylor_green:1', N)

    def solve(dt, T=0.2):
        u = u0
        for n in range(int(round(T / dt))):
            u = step(u, n * dt, dt, scheme)
        return u

    reference = solve(0.0025)
    e1 = sobolev_norms(solve(0.02) - reference)[0]
    e2 = sobolev_norms(solve(0.01) - reference)[0]
    assert e2 > 0 and e1 / e2 > 10.0, f"error ratio {e1 / e2:.2f}"

    one = step(u0, 0.0, 0.05, scheme)
    two = step(step(u0, 0.0, 0.025, scheme), 0.025, 0.025, scheme)
    one_h = step(u0, 0.0, 0.025, scheme)
    two_h = step(step(u0, 0.0, 0.0125, scheme), 0.0125, 0.0125, scheme)
    local = sobolev_norms(one - two)[0] / sobolev_norms(one_h - two_h)[0]
    assert local > 16.0, f"local error ratio {local:.2f}"
    print(f"✅ global error ratio {e1 / e2:.1f}, local ratio {local:.1f} under step halving")


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def test_run_zero_datum():
    for overrides in ({}, {'scheme': 'mollified', 'cutoff': None, 'm': 2.0}):
        traj = run(config(datum='zero', **overrides))
        assert not traj.truncated
        assert all(s.field.is_zero() for s in traj.samples)
        assert np.all(traj.series('l2') == 0.0)
    print("✅ zero datum stays identically zero")


def test_run_kolmogorov_decay():
    traj = run(config(datum='kolmogorov:1', cutoff=1.0, T=1.0), keep_fields=False)
    assert len(traj) == 101
    assert math.isclose(traj.times[-1], 1.0)
    energy = traj.series('l2')[-1] ** 2
    expected = math.exp(-2.0) * TWO_PI_CUBED / 2.0
    assert abs(energy - expected) <= 1e-8 * expected, (energy, expected)
    assert traj.samples[0].field is None
    print(f"✅ Kolmogorov energy at T=1: {energy:.10f} (exact {expected:.10f})")


def test_run_sampling_and_determinism():
    cfg = config(T=0.05, dt=0.01, sample_every=2)
    a, b = run(cfg), run(cfg)
    assert np.allclose(a.times, [0.0, 0.02, 0.04, 0.05], rtol=0, atol=1e-15)
    assert a.to_frame().equals(b.to_frame())
    assert np.all(np.diff(a.series('l2')) <= 0), "energy grew"
    print("✅ sampling includes the final step; reruns are identical")


def test_run_blowup_guard():
    traj = run(config(datum='random:amplitude=1e6', cutoff=2.0, T=0.1), keep_fields=False)
    assert traj.truncated
    assert traj.blowup_time is not None and traj.blowup_time <= 0.1
    assert len(traj) >= 1 and np.all(np.isfinite(traj.series('l2')))
    print(f"✅ blow-up recorded at t={traj.blowup_time:g}: {traj.blowup_reason}")


def test_resolution_study():
    base = {'scheme': 'mollified', 'cutoff': None, 'm': 4.0, 'dt': 0.01, 'T': 0.5,
            'sample_every': 50}
    coarse = run(config(N=16, **base), keep_fields=False)
    fine = run(config(N=32, **base), keep_fields=False)
    g16, g32 = coarse.series('dirichlet')[-1], fine.series('dirichlet')[-1]
    assert abs(g16 - g32) <= 1e-4 * g32, (g16, g32)
    print(f"✅ N=16 vs N=32 Dirichlet norms agree: {g16:.10f} / {g32:.10f}")


TESTS = [
    test_config_validation,
    test_config_from_mapping,
    test_mode_count_cutoff,
    test_galerkin_rhs,
    test_mollified_rhs,
    test_step_linear_modes,
    test_step_keeps_invariants,
    test_step_non_finite_state,
    test_step_fourth_order,
    test_run_zero_datum,
    test_run_kolmogorov_decay,
    test_run_sampling_and_determinism,
    test_run_blowup_guard,
    test_resolution_study,
]


if __name__ == "__main__":
    print("\n" + "=" * 60)
    print("DYNAMICS TESTS")
    print("=" * 60)
    failed = []
    for test in TESTS:
        try:
            test()
        except AssertionError as e:
            print(f"❌ {test.__name__}: {e}")
            failed.append(test.__name__)
    print("\n" + "=" * 60)
    if failed:
        print(f"❌ {len(failed)}/{len(TESTS)} FAILED: {', '.join(failed)}")
        sys.exit(1)
    print(f"✅ ALL {len(TESTS)} TESTS PASSED")
