"""
Tests for spectral_core: field invariants, Leray projector, mollifier,
norms and the dealiased nonlinearity against a direct convolution sum.
Run with: python test_spectral_core.py
"""

import math
import os
import sys

import numpy as np

from spectral_core import (
    TWO_PI_CUBED, DatumSpec, SpectralField, axis_modes, leray_project, make_field,
    mollifier_multiplier, mollify, nonlinear_term, norms, parse_datum, pressure_gradient,
    project_array, retained_mask, sobolev_norms, spectral_inner, symmetrize, thread_count,
    wavenumbers,
)


def random_array(N, seed):
    """Hermitian, Nyquist-free coefficients that are NOT divergence-free"""
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((3, N, N, N)) + 1j * rng.standard_normal((3, N, N, N))
    return symmetrize(c) * retained_mask(N)


def random_field(N, seed, slope=-5.0 / 3.0):
    return make_field(DatumSpec('random', 1.0, seed, slope), N)


def convolution_oracle(a, u):
    """P Σ_{p+q=k} i(â(p)·q) û(q) on the retained modes, summed directly"""
    N = u.N
    modes = axis_modes(N).astype(int)
    K = wavenumbers(N)
    out = np.zeros((3, N, N, N), dtype=complex)
    for ia, ib, ic in np.argwhere(retained_mask(N)):
        ap = a.coeffs[:, ia, ib, ic]
        if not np.any(ap):
            continue
        p = np.array([modes[ia], modes[ib], modes[ic]], dtype=float)
        Q = K - p[:, None, None, None]
        inside = np.all(np.abs(Q) < N // 2, axis=0)
        qi = Q.astype(int) % N
        uq = u.coeffs[:, qi[0], qi[1], qi[2]]
        a_dot_q = np.einsum('i,i...->...', ap, Q)
        out += 1j * a_dot_q * uq * inside
    return project_array(out * retained_mask(N))


def assert_close(x, y, rtol, label):
    scale = max(1.0, abs(y))
    assert abs(x - y) <= rtol * scale, f"{label}: {x!r} vs {y!r}"


# ---------------------------------------------------------------------------
# Fields and data
# ---------------------------------------------------------------------------

def test_datum_invariants():
    for name in ('zero', 'kolmogorov:1', 'taylor_green:2', 'random:seed=3,slope=-2'):
        f = make_field(name, 8)
        assert f.divergence_residual() <= 1e-13, name
        assert f.hermitian_residual() <= 1e-13, name
        assert f.mean_residual() == 0.0, name
        assert not np.any(f.coeffs * ~retained_mask(8)), f"{name} has Nyquist or mean content"
    print("✅ presets are Hermitian, mean-zero, divergence-free and Nyquist-free")


def test_parse_datum():
    assert parse_datum('kolmogorov').amplitude == 1.0
    assert parse_datum('taylor-green:0.5') == DatumSpec('taylor_green', 0.5)
    spec = parse_datum('random:seed=3,slope=-2,amplitude=4')
    assert (spec.seed, spec.slope, spec.amplitude) == (3, -2.0, 4.0)
    for bad in ('vortex_ring', 'kolmogorov:inf', 'random:colour=red', 'kolmogorov:abc'):
        try:
            parse_datum(bad)
        except ValueError:
            continue
        raise AssertionError(f"{bad!r} accepted")
    print("✅ datum grammar parsed and bad data rejected")


def test_invalid_resolution():
    for N in (6.5, 7, 2, 0):
        try:
            SpectralField.zeros(N)
        except ValueError:
            continue
        raise AssertionError(f"N={N} accepted")
    try:
        SpectralField(np.zeros((3, 8, 8, 6)))
    except ValueError:
        pass
    else:
        raise AssertionError("non-cubic coefficient array accepted")
    print("✅ bad resolutions rejected")


def test_random_datum_amplitude():
    f = make_field('random:seed=5,amplitude=3', 16)
    l2, _, _ = sobolev_norms(f)
    assert_close(l2, 3.0 * TWO_PI_CUBED ** 0.5, 1e-12, "random rms amplitude")
    g = make_field('random:seed=5,amplitude=3', 16)
    assert np.array_equal(f.coeffs, g.coeffs), "random datum not deterministic"
    print("✅ random datum has rms velocity = amplitude and is seeded")


def test_physical_round_trip():
    f = random_field(8, 11)
    g = SpectralField.from_physical(f.physical())
    assert np.max(np.abs(f.coeffs - g.coeffs)) <= 1e-14
    print("✅ physical/spectral transform is consistent")


def test_padding_preserves_norms():
    f = random_field(8, 2)
    p = f.padded(12)
    for x, y in zip(sobolev_norms(f), sobolev_norms(p)):
        assert_close(x, y, 1e-13, "padded norm")
    try:
        f.padded(6)
    except ValueError:
        pass
    else:
        raise AssertionError("padding down accepted")
    print("✅ zero padding keeps every norm")


# ---------------------------------------------------------------------------
# Leray projector and mollifier
# ---------------------------------------------------------------------------

def test_leray_examples():
    N = 8
    assert leray_project(SpectralField.zeros(N)).is_zero()

    c = np.zeros((3, N, N, N), dtype=complex)
    c[:, 1, 1, 0] = [1.0, 0.0, 0.0]
    c[:, -1, -1, 0] = [1.0, 0.0, 0.0]
    out = leray_project(c).coeffs[:, 1, 1, 0]
    assert np.allclose(out, [0.5, -0.5, 0.0], atol=1e-15), out

    c = np.zeros((3, N, N, N), dtype=complex)
    c[:, 1, 0, 0] = [1.0, 1.0, 0.0]
    c[:, -1, 0, 0] = [1.0, 1.0, 0.0]
    projected = leray_project(c).coeffs
    assert np.allclose(projected[:, 1, 0, 0], [0.0, 1.0, 0.0], atol=1e-15), projected[:, 1, 0, 0]
    assert np.allclose(projected[:, -1, 0, 0], [0.0, 1.0, 0.0], atol=1e-15)

    rng = np.random.default_rng(0)
    phi = symmetrize(rng.standard_normal((1, N, N, N)) + 1j * rng.standard_normal((1, N, N, N)))[0]
    gradient = 1j * wavenumbers(N) * phi * retained_mask(N)
    assert np.max(np.abs(leray_project(gradient).coeffs)) <= 1e-14
    print("✅ Leray projector removes gradients and the component along k")


def test_leray_projector_properties():
    N = 8
    a, b = random_array(N, 1), random_array(N, 2)
    pa, pb = project_array(a), project_array(b)
    assert np.max(np.abs(project_array(pa) - pa)) <= 1e-14, "not idempotent"
    lhs, rhs = spectral_inner(pa, b), spectral_inner(a, pb)
    assert_close(lhs, rhs, 1e-12, "self-adjointness")
    assert SpectralField(pa).divergence_residual() <= 1e-14
    print("✅ Leray projector is idempotent and self-adjoint")


def test_mollifier():
    N = 8
    assert mollify(SpectralField.zeros(N), 2.0).is_zero()

    values = [mollifier_multiplier(N, m)[1, 0, 0] for m in (1.0, 2.0, 4.0, 1e6)]
    assert all(b > a for a, b in zip(values, values[1:])), values
    assert abs(values[-1] - 1.0) <= 1e-11
    assert 0 < values[0] <= 1.0

    f = random_field(N, 4)
    l2, _, _ = sobolev_norms(f)
    for m in (1.0, 3.0):
        assert sobolev_norms(mollify(f, m))[0] <= l2 * (1 + 1e-14)

    c = random_array(N, 9)
    lhs = mollify(leray_project(c), 2.0).coeffs
    rhs = leray_project(mollify(SpectralField(c), 2.0)).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-14, "mollifier does not commute with P"

    for bad in (0.5, 0.0):
        try:
            mollifier_multiplier(N, bad)
        except ValueError:
            continue
        raise AssertionError(f"m={bad} accepted")
    try:
        mollifier_multiplier(N, 2.0, 'box')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown kernel accepted")
    print("✅ mollifier contracts, tends to identity and commutes with P")


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def test_norms_closed_forms():
    kol = norms(make_field('kolmogorov:1', 8))
    expected = math.sqrt(TWO_PI_CUBED / 2.0)
    for value in (kol.l2, kol.dirichlet, kol.laplacian_l2):
        assert_close(value, expected, 1e-12, "kolmogorov norm")
    assert_close(kol.sup, 1.0, 1e-12, "kolmogorov sup")
    assert_close(kol.sup_bound, 1.0, 1e-12, "kolmogorov sup bound")

    tg = norms(make_field('taylor_green:1', 8))
    assert_close(tg.l2 ** 2, TWO_PI_CUBED / 4.0, 1e-12, "taylor_green energy")
    assert_close(tg.dirichlet ** 2, 3.0 * TWO_PI_CUBED / 4.0, 1e-12, "taylor_green dirichlet")
    assert_close(tg.laplacian_l2 ** 2, 9.0 * TWO_PI_CUBED / 4.0, 1e-12, "taylor_green laplacian")
    assert_close(tg.sup, 1.0, 1e-12, "taylor_green sup")
    assert tg.sup_bound >= tg.sup

    zero = norms(SpectralField.zeros(8))
    assert (zero.l2, zero.dirichlet, zero.laplacian_l2, zero.sup, zero.sup_bound) == (0, 0, 0, 0, 0)
    print("✅ norms match closed forms for the presets")


def test_parseval_and_interpolation():
    f = random_field(8, 21)
    u = f.physical()
    quadrature = TWO_PI_CUBED / 8 ** 3 * float(np.sum(u * u))
    b = norms(f)
    assert_close(quadrature, b.l2 ** 2, 1e-12, "Parseval")
    assert b.dirichlet ** 2 <= b.l2 * b.laplacian_l2 * (1 + 1e-12)
    assert b.sup <= b.sup_bound * (1 + 1e-12)
    print("✅ Parseval, interpolation and sup bound hold")


# ---------------------------------------------------------------------------
# Nonlinear term
# ---------------------------------------------------------------------------

def test_nonlinear_trivial_cases():
    zero = SpectralField.zeros(8)
    assert nonlinear_term(zero, zero).is_zero()
    kol = make_field('kolmogorov:1', 8)
    assert np.max(np.abs(nonlinear_term(kol, kol).coeffs)) <= 1e-14
    assert np.max(np.abs(pressure_gradient(kol, kol))) <= 1e-14
    print("✅ zero and shear flows have no nonlinear term")


def test_nonlinear_matches_convolution():
    N = 8
    fields = [make_field('taylor_green:1', N)] + [random_field(N, seed) for seed in range(20)]
    for f in fields:
        expected = convolution_oracle(f, f)
        got = nonlinear_term(f, f).coeffs
        scale = max(1.0, float(np.max(np.abs(expected))))
        assert np.max(np.abs(got - expected)) <= 1e-12 * scale, "self-advection differs from direct sum"

    a = mollify(random_field(N, 100), 2.0)
    u = random_field(N, 101)
    expected = convolution_oracle(a, u)
    got = nonlinear_term(a, u).coeffs
    assert np.max(np.abs(got - expected)) <= 1e-12 * max(1.0, float(np.max(np.abs(expected))))
    print("✅ padded nonlinearity equals the truncated convolution sum")


def test_nonlinear_structure():
    N = 8
    for seed in range(5):
        u = random_field(N, 40 + seed)
        for a in (u, mollify(u, 1.5)):
            nl = nonlinear_term(a, u)
            assert nl.hermitian_residual() <= 1e-13
            assert nl.divergence_residual() <= 1e-13
            scale = sobolev_norms(nl)[0] * sobolev_norms(u)[0]
            assert abs(nl.inner(u)) <= 1e-12 * scale, "(a·∇u, u) != 0"

        grad_p = pressure_gradient(u, u)
        assert np.max(np.abs(project_array(grad_p))) <= 1e-13 * max(1.0, float(np.max(np.abs(grad_p))))
        cross = np.cross(wavenumbers(N), grad_p, axis=0)
        assert np.max(np.abs(cross)) <= 1e-12 * max(1.0, float(np.max(np.abs(grad_p))))
    print("✅ nonlinear term is solenoidal, Hermitian and energy-neutral; pressure is a gradient")


def test_thread_count_from_environment():
    saved = os.environ.get('NS_LAB_THREADS')
    try:
        for raw, expected in (('4', 4), ('0', 1), ('', 1), ('abc', 1), ('2.5', 1)):
            os.environ['NS_LAB_THREADS'] = raw
            assert thread_count() == expected, (raw, thread_count())
        os.environ.pop('NS_LAB_THREADS')
        assert thread_count() == 1
        assert thread_count(3) == 3
    finally:
        if saved is None:
            os.environ.pop('NS_LAB_THREADS', None)
        else:
            os.environ['NS_LAB_THREADS'] = saved
    print("✅ NS_LAB_THREADS falls back to 1 when it is not a positive integer")


TESTS = [
    test_datum_invariants,
    test_parse_datum,
    test_invalid_resolution,
    test_random_datum_amplitude,
    test_physical_round_trip,
    test_padding_preserves_norms,
    test_leray_examples,
    test_leray_projector_properties,
    test_mollifier,
    test_norms_closed_forms,
    test_parseval_and_interpolation,
    test_nonlinear_trivial_cases,
    test_nonlinear_matches_convolution,
    test_nonlinear_structure,
    test_thread_count_from_environment,
]


if __name__ == "__main__":
    print("\n" + "=" * 60)
    print("SPECTRAL CORE TESTS")
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
