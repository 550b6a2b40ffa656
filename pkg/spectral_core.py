"""
SPECTRAL CORE
=============

Divergence-free velocity fields on the periodic torus [0, 2π)³ stored as
truncated Fourier series, plus the operators everything else is built from:
Leray projector, Friedrichs mollifier (radial Fourier multiplier), norms and
the dealiased convective nonlinearity.

Coefficient layout: ``coeffs[i, a, b, c]`` is component i of the Fourier
coefficient at wavevector (k1, k2, k3) = (fftfreq(N)*N)[a, b, c], so that
v(x) = Σ_k coeffs(k) e^{ik·x}. Every field produced here is Hermitian,
mean-zero, divergence-free and has empty Nyquist planes (|k_i| = N/2).
"""

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
import scipy.fft as spfft

TWO_PI_CUBED = (2.0 * np.pi) ** 3
DEFAULT_MOLLIFIER = 'gaussian'


def thread_count(default: int = 1) -> int:
    """NS_LAB_THREADS as a positive int; ``default`` when unset or not an integer"""
    try:
        return max(1, int(os.getenv('NS_LAB_THREADS', '') or default))
    except ValueError:
        return max(1, default)


FFT_WORKERS = thread_count()

# radial symbols ρ̂(r): smooth, ρ̂(0) = 1, 0 < ρ̂ ≤ 1, decreasing in r
MOLLIFIER_KERNELS = {
    'gaussian': lambda r: np.exp(-0.5 * r ** 2),
    'super_gaussian': lambda r: np.exp(-0.5 * r ** 4),
}

PRESETS = ('zero', 'kolmogorov', 'taylor_green', 'random')


def set_fft_workers(workers: int):
    """Cap the thread count scipy.fft may use (NS_LAB_THREADS)"""
    global FFT_WORKERS
    FFT_WORKERS = max(1, int(workers))


def validate_resolution(N) -> int:
    if isinstance(N, bool) or not float(N).is_integer():
        raise ValueError(f"resolution N must be an even integer >= 4, got {N!r}")
    N = int(N)
    if N < 4 or N % 2:
        raise ValueError(f"resolution N must be an even integer >= 4, got {N}")
    return N


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def axis_modes(N: int) -> np.ndarray:
    """Integer wavenumbers along one axis in FFT order"""
    return _readonly(np.fft.fftfreq(N, 1.0 / N))


@lru_cache(maxsize=16)
def wavenumbers(N: int) -> np.ndarray:
    k = axis_modes(N)
    return _readonly(np.array(np.meshgrid(k, k, k, indexing='ij')))


@lru_cache(maxsize=16)
def k_squared(N: int) -> np.ndarray:
    return _readonly(np.sum(wavenumbers(N) ** 2, axis=0))


@lru_cache(maxsize=16)
def retained_mask(N: int) -> np.ndarray:
    """True on every mode a field may carry: not the mean, not a Nyquist plane"""
    nyquist = np.any(np.abs(wavenumbers(N)) == N // 2, axis=0)
    mask = ~nyquist
    mask[0, 0, 0] = False
    return _readonly(mask)


@lru_cache(maxsize=16)
def _negated_index(N: int) -> np.ndarray:
    return _readonly((-np.arange(N)) % N)


def _reflect(c: np.ndarray) -> np.ndarray:
    """c(-k) laid out at position k"""
    neg = _negated_index(c.shape[-1])
    return c[:, neg[:, None, None], neg[None, :, None], neg[None, None, :]]


def symmetrize(c: np.ndarray) -> np.ndarray:
    """Closest Hermitian-symmetric array: ½(c(k) + conj c(-k))"""
    return 0.5 * (c + np.conj(_reflect(c)))


def project_array(c: np.ndarray) -> np.ndarray:
    """(I - kk^T/|k|²) c per mode, zero mean"""
    N = c.shape[-1]
    K = wavenumbers(N)
    k2 = k_squared(N)
    safe = np.where(k2 == 0, 1.0, k2)
    k_dot_c = np.sum(K * c, axis=0)
    out = c - K * (k_dot_c / safe)
    out[:, 0, 0, 0] = 0.0
    return out


def enforce_invariants(c: np.ndarray) -> np.ndarray:
    """Hermitian, Nyquist-free, mean-zero, divergence-free"""
    c = symmetrize(np.asarray(c, dtype=np.complex128))
    c = c * retained_mask(c.shape[-1])
    return project_array(c)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Velocity field on the torus as a (3, N, N, N) complex coefficient array"""
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 4 or c.shape[0] != 3 or not (c.shape[1] == c.shape[2] == c.shape[3]):
            raise ValueError(f"coefficients must have shape (3, N, N, N), got {c.shape}")
        validate_resolution(c.shape[1])
        object.__setattr__(self, 'coeffs', c)

    @property
    def N(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def zeros(cls, N: int) -> 'SpectralField':
        N = validate_resolution(N)
        return cls(np.zeros((3, N, N, N), dtype=np.complex128))

    @classmethod
    def from_array(cls, c: np.ndarray) -> 'SpectralField':
        return cls(enforce_invariants(c))

    @classmethod
    def from_physical(cls, u: np.ndarray) -> 'SpectralField':
        u = np.asarray(u, dtype=float)
        N = validate_resolution(u.shape[-1])
        c = spfft.fftn(u, axes=(1, 2, 3), workers=FFT_WORKERS) / N ** 3
        return cls.from_array(c)

    def physical(self) -> np.ndarray:
        N = self.N
        u = spfft.ifftn(self.coeffs, axes=(1, 2, 3), workers=FFT_WORKERS)
        return u.real * N ** 3

    def __add__(self, other: 'SpectralField') -> 'SpectralField':
        _check_same_resolution(self, other)
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other: 'SpectralField') -> 'SpectralField':
        _check_same_resolution(self, other)
        return SpectralField(self.coeffs - other.coeffs)

    def __neg__(self) -> 'SpectralField':
        return SpectralField(-self.coeffs)

    def __mul__(self, scalar: float) -> 'SpectralField':
        return SpectralField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def inner(self, other: 'SpectralField') -> float:
        """L² inner product (2π)³ Σ conj(a)·b"""
        _check_same_resolution(self, other)
        return spectral_inner(self.coeffs, other.coeffs)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def divergence_residual(self) -> float:
        """max |k·c(k)| relative to max |k||c(k)|"""
        K = wavenumbers(self.N)
        num = np.max(np.abs(np.sum(K * self.coeffs, axis=0)))
        den = np.max(np.sqrt(k_squared(self.N)) * np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0)))
        return float(num / den) if den > 0 else 0.0

    def hermitian_residual(self) -> float:
        scale = np.max(np.abs(self.coeffs))
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(self.coeffs - np.conj(_reflect(self.coeffs)))) / scale)

    def mean_residual(self) -> float:
        return float(np.max(np.abs(self.coeffs[:, 0, 0, 0])))

    def padded(self, M: int) -> 'SpectralField':
        """Embed into an M³ coefficient grid (zero padding); norms are unchanged"""
        M = validate_resolution(M)
        if M < self.N:
            raise ValueError(f"cannot pad resolution {self.N} down to {M}")
        if M == self.N:
            return self
        ix = _pad_index(self.N, M)
        out = np.zeros((3, M, M, M), dtype=np.complex128)
        out[:, ix[:, None, None], ix[None, :, None], ix[None, None, :]] = self.coeffs
        return SpectralField(out)


def _check_same_resolution(a: SpectralField, b: SpectralField):
    if a.N != b.N:
        raise ValueError(f"resolution mismatch: {a.N} vs {b.N}")


def spectral_inner(a: np.ndarray, b: np.ndarray) -> float:
    return TWO_PI_CUBED * float(np.sum((np.conj(a) * b).real))


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatumSpec:
    """Initial-datum descriptor: a preset name plus its parameters"""
    kind: str
    amplitude: float = 1.0
    seed: int = 0
    slope: float = -5.0 / 3.0

    def label(self) -> str:
        if self.kind == 'zero':
            return 'zero'
        if self.kind == 'random':
            return f"random:seed={self.seed},slope={self.slope!r},amplitude={self.amplitude!r}"
        return f"{self.kind}:{self.amplitude!r}"


def parse_datum(text: Union[str, DatumSpec]) -> DatumSpec:
    """
    Parse ``name``, ``name:amplitude`` or ``name:key=value,...``
    (keys: amplitude, seed, slope). Example: ``random:seed=3,slope=-2``.
    """
    if isinstance(text, DatumSpec):
        spec = text
    else:
        text = str(text).strip()
        name, _, params = text.partition(':')
        name = name.strip().lower().replace('-', '_')
        values = {}
        params = params.strip()
        if params:
            if '=' not in params:
                values['amplitude'] = params
            else:
                for item in params.split(','):
                    key, sep, value = item.partition('=')
                    key = key.strip().lower()
                    if not sep or key not in ('amplitude', 'seed', 'slope'):
                        raise ValueError(f"bad datum parameter {item.strip()!r} in {text!r}")
                    values[key] = value.strip()
        try:
            spec = DatumSpec(
                kind=name,
                amplitude=float(values.get('amplitude', 1.0)),
                seed=int(values.get('seed', 0)),
                slope=float(values.get('slope', -5.0 / 3.0)),
            )
        except ValueError as e:
            raise ValueError(f"bad datum {text!r}: {e}") from None

    if spec.kind not in PRESETS:
        raise ValueError(f"unknown preset {spec.kind!r} (known: {', '.join(PRESETS)})")
    if not math.isfinite(spec.amplitude):
        raise ValueError(f"datum amplitude must be finite, got {spec.amplitude!r}")
    if not math.isfinite(spec.slope):
        raise ValueError(f"datum spectral slope must be finite, got {spec.slope!r}")
    return spec


def grid(N: int) -> np.ndarray:
    x = 2.0 * np.pi * np.arange(N) / N
    return np.array(np.meshgrid(x, x, x, indexing='ij'))


def make_field(spec: Union[str, DatumSpec], N: int) -> SpectralField:
    """Build an initial datum satisfying all SpectralField invariants"""
    N = validate_resolution(N)
    spec = parse_datum(spec)
    a = spec.amplitude

    if spec.kind == 'zero' or a == 0.0:
        return SpectralField.zeros(N)

    if spec.kind == 'kolmogorov':
        X = grid(N)
        u = np.zeros((3, N, N, N))
        u[0] = a * np.sin(X[1])
        return SpectralField.from_physical(u)

    if spec.kind == 'taylor_green':
        X = grid(N)
        u = np.zeros((3, N, N, N))
        u[0] = a * np.sin(X[0]) * np.cos(X[1]) * np.cos(X[2])
        u[1] = -a * np.cos(X[0]) * np.sin(X[1]) * np.cos(X[2])
        return SpectralField.from_physical(u)

    # random: shell energy ∝ |k|^slope, rms velocity = amplitude
    rng = np.random.default_rng(spec.seed)
    c = rng.standard_normal((3, N, N, N)) + 1j * rng.standard_normal((3, N, N, N))
    k2 = k_squared(N)
    weight = np.where(k2 > 0, np.where(k2 > 0, k2, 1.0) ** ((spec.slope - 2.0) / 4.0), 0.0)
    field = SpectralField.from_array(c * weight)
    l2 = math.sqrt(spectral_inner(field.coeffs, field.coeffs))
    if l2 == 0.0:
        return field
    target = abs(a) * TWO_PI_CUBED ** 0.5
    return field * (math.copysign(target / l2, a))


# ---------------------------------------------------------------------------
# Projector and mollifier
# ---------------------------------------------------------------------------

def leray_project(f: Union[SpectralField, np.ndarray]) -> SpectralField:
    c = f.coeffs if isinstance(f, SpectralField) else np.asarray(f, dtype=np.complex128)
    return SpectralField(project_array(c))


@lru_cache(maxsize=32)
def mollifier_multiplier(N: int, m: float, kernel: str = DEFAULT_MOLLIFIER) -> np.ndarray:
    if not m >= 1:
        raise ValueError(f"mollification index must be >= 1, got {m!r}")
    if kernel not in MOLLIFIER_KERNELS:
        raise ValueError(f"unknown mollifier kernel {kernel!r} (known: {', '.join(MOLLIFIER_KERNELS)})")
    r = np.sqrt(k_squared(N)) / m
    return _readonly(MOLLIFIER_KERNELS[kernel](r))


def mollify(f: SpectralField, m: float, kernel: str = DEFAULT_MOLLIFIER) -> SpectralField:
    """Friedrichs mollifier J_m as the radial multiplier ρ̂(|k|/m)"""
    return SpectralField(f.coeffs * mollifier_multiplier(f.N, float(m), kernel))


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormBundle:
    t: float
    l2: float
    dirichlet: float
    laplacian_l2: float
    d2_l2: float
    sup: float                      # grid maximum (lower estimate)
    sup_bound: float                # ℓ¹ coefficient sum (certified upper bound)
    vt_l2: Optional[float] = None


def sobolev_norms(f: SpectralField):
    """(‖f‖₂, ‖∇f‖₂, ‖Δf‖₂)"""
    amp2 = np.sum(np.abs(f.coeffs) ** 2, axis=0)
    k2 = k_squared(f.N)
    return (math.sqrt(TWO_PI_CUBED * float(np.sum(amp2))),
            math.sqrt(TWO_PI_CUBED * float(np.sum(k2 * amp2))),
            math.sqrt(TWO_PI_CUBED * float(np.sum(k2 * k2 * amp2))))


def norms(f: SpectralField, f_t: Optional[SpectralField] = None, t: float = 0.0) -> NormBundle:
    amp2 = np.sum(np.abs(f.coeffs) ** 2, axis=0)
    l2, dirichlet, laplacian = sobolev_norms(f)

    if f.is_zero():
        sup = 0.0
    else:
        u = f.physical()
        sup = float(np.sqrt(np.max(np.sum(u * u, axis=0))))
    sup_bound = float(np.sum(np.sqrt(amp2)))

    vt_l2 = None
    if f_t is not None:
        vt_l2 = math.sqrt(max(spectral_inner(f_t.coeffs, f_t.coeffs), 0.0))

    return NormBundle(t=float(t), l2=l2, dirichlet=dirichlet, laplacian_l2=laplacian,
                      d2_l2=laplacian, sup=sup, sup_bound=sup_bound, vt_l2=vt_l2)


# ---------------------------------------------------------------------------
# Convective nonlinearity (3/2-rule dealiased)
# ---------------------------------------------------------------------------

def padded_size(N: int) -> int:
    return 3 * N // 2


@lru_cache(maxsize=None)
def _pad_index(N: int, M: int) -> np.ndarray:
    return _readonly(axis_modes(N).astype(np.int64) % M)


def _to_padded_physical(c: np.ndarray, M: int) -> np.ndarray:
    N = c.shape[-1]
    half = N // 2
    ix = _pad_index(N, M)
    h = np.zeros((c.shape[0], M, M, M // 2 + 1), dtype=np.complex128)
    h[:, ix[:, None, None], ix[None, :, None], np.arange(half)[None, None, :]] = c[..., :half]
    return spfft.irfftn(h, s=(M, M, M), axes=(1, 2, 3), workers=FFT_WORKERS) * M ** 3


def _half_from_padded(H: np.ndarray, N: int, M: int) -> np.ndarray:
    half = N // 2
    ix = _pad_index(N, M)
    h = np.zeros((H.shape[0], N, N, half + 1), dtype=np.complex128)
    h[..., :half] = H[:, ix[:, None, None], ix[None, :, None], np.arange(half)[None, None, :]]
    return h


def _full_from_half(h: np.ndarray, N: int) -> np.ndarray:
    half = N // 2
    full = np.zeros(h.shape[:-1] + (N,), dtype=np.complex128)
    full[..., :half + 1] = h
    neg = _negated_index(N)
    j = np.arange(half + 1, N)
    full[..., j] = np.conj(h[:, neg[:, None, None], neg[None, :, None], (N - j)[None, None, :]])
    return full


def convective_coeffs(advecting: SpectralField, u: SpectralField) -> np.ndarray:
    """
    Fourier coefficients of (advecting·∇)u truncated to the retained modes,
    computed as ∂_j(a_j u_i) on the 3/2-padded grid. Exact for
    divergence-free advecting fields.
    """
    _check_same_resolution(advecting, u)
    N = u.N
    M = padded_size(N)
    up = _to_padded_physical(u.coeffs, M)

    if advecting is u:
        pairs = [(i, j) for i in range(3) for j in range(i, 3)]
        products = np.stack([up[i] * up[j] for i, j in pairs])
        slot = {}
        for n, (i, j) in enumerate(pairs):
            slot[(i, j)] = slot[(j, i)] = n
    else:
        ap = _to_padded_physical(advecting.coeffs, M)
        products = np.stack([ap[j] * up[i] for i in range(3) for j in range(3)])
        slot = {(i, j): 3 * i + j for i in range(3) for j in range(3)}

    P = spfft.rfftn(products, axes=(1, 2, 3), workers=FFT_WORKERS) / M ** 3
    ph = _half_from_padded(P, N, M)
    Kh = wavenumbers(N)[..., :N // 2 + 1]

    conv = np.zeros((3,) + ph.shape[1:], dtype=np.complex128)
    for i in range(3):
        for j in range(3):
            conv[i] += 1j * Kh[j] * ph[slot[(i, j)]]
    return _full_from_half(conv, N) * retained_mask(N)


def nonlinear_term(advecting: SpectralField, u: SpectralField) -> SpectralField:
    """P[(advecting·∇)u], exact Galerkin truncation of the quadratic term"""
    return SpectralField(project_array(convective_coeffs(advecting, u)))


def pressure_gradient(advecting: SpectralField, u: SpectralField) -> np.ndarray:
    """(I - P)[-(advecting·∇)u]: the pressure gradient, parallel to k mode by mode"""
    conv = convective_coeffs(advecting, u)
    return -(conv - project_array(conv))
