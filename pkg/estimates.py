"""
ESTIMATES
=========

A-priori inequalities checked along a Trajectory. Every check returns an
InequalityReport with per-sample lhs/rhs series and the convention

    margin = rhs - lhs,   pass  <=>  min(margin) >= -tolerance

Checks:
- energy       ‖v(t)‖₂² + 2∫₀ᵗ‖∇v‖₂² <= ‖v₀‖₂²
- ds           ½[∫‖D²v‖₂^{2/3}]³ <= [T + ∫‖∇v‖₂²]²[arctan‖∇v₀‖₂² + c∫‖∇v‖₂²]
- ddn          d/dt‖∇v‖₂² + ‖PΔv‖₂² + ‖v_t‖₂² <= ‖v‖∞²‖∇v‖₂²
- dn           the same left side equals ‖P(a·∇v)‖₂² (identity)
- ddn_agmon    the same left side <= c²‖PΔv‖₂‖∇v‖₂³
- agmon        ‖v‖∞ <= c‖PΔv‖₂^{1/2}‖∇v‖₂^{1/2}
- weak         integral identity against divergence-free test modes
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid

from dynamics import (
    DEFAULT_AGMON_MARGIN, DEFAULT_AGMON_TRIALS, DEFAULT_TOL_DDN, DEFAULT_TOL_DDN_C,
    DEFAULT_TOL_ENERGY, DEFAULT_TOL_ENERGY_C, DEFAULT_TOL_WEAK, Scheme, Trajectory,
    galerkin_mask, nonlinear_part,
)
from lab_logger import Logger
from spectral_core import TWO_PI_CUBED, DatumSpec, SpectralField, make_field, norms

HARD_FAIL_FACTOR = 10.0
DEFAULT_ALPHA = 2.0 / 3.0
DEFAULT_TOL_DS = 1e-9                # relative to max rhs
DEFAULT_TOL_IDENTITY = 1e-9          # dn identity, relative
DEFAULT_AGMON_SEED = 1
AGMON_SLOPE_RANGE = (-6.0, 0.0)

CHECK_NAMES = ('energy', 'ds', 'ddn', 'dn', 'ddn_agmon', 'agmon', 'weak')


@dataclass
class InequalityReport:
    name: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    tolerance: float
    applicable: bool = True
    two_sided: bool = False            # identity checks: |rhs - lhs| <= tolerance
    axis: str = 't'
    failures: List[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def margins(self) -> np.ndarray:
        return np.asarray(self.rhs, dtype=float) - np.asarray(self.lhs, dtype=float)

    @property
    def max_violation(self) -> float:
        """Worst signed margin (rhs - lhs); negative means the inequality is violated"""
        m = self.margins
        m = m[~np.isnan(m)]
        if m.size == 0:
            return 0.0
        if self.two_sided:
            return -float(np.max(np.abs(m)))
        return float(np.min(m))

    @property
    def passed(self) -> bool:
        if not self.applicable:
            return True
        return self.max_violation >= -self.tolerance and not self.failures

    @property
    def status(self) -> str:
        if not self.applicable:
            return 'not_applicable'
        v = self.max_violation
        if v < -HARD_FAIL_FACTOR * self.tolerance:
            return 'hard_fail'
        if v < -self.tolerance or self.failures:
            return 'fail'
        if v < 0:
            return 'warn'
        return 'pass'

    def series_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            self.axis: np.asarray(self.times, dtype=float),
            'lhs': np.asarray(self.lhs, dtype=float),
            'rhs': np.asarray(self.rhs, dtype=float),
            'margin': self.margins,
        })

    def to_dict(self, series_file: Optional[str] = None) -> dict:
        return {
            'name': self.name,
            'pass': self.passed,
            'status': self.status,
            'applicable': self.applicable,
            'tolerance': float(self.tolerance),
            'max_violation': self.max_violation,
            'series_file': series_file,
            'failures': list(self.failures),
            'details': self.details,
        }

    def log(self):
        status = self.status
        msg = f"{self.name}: {status} (max violation {self.max_violation:.3e}, tolerance {self.tolerance:.3e})"
        if status in ('pass', 'not_applicable'):
            Logger.verify(f"✅ {msg}")
        elif status == 'warn':
            Logger.warning(f"⚠️ {msg}")
        else:
            Logger.error(f"❌ {msg}")
        for failure in self.failures:
            Logger.error(f"   {failure}")


def _tolerance(traj: Trajectory, key: str, default: float) -> float:
    return float(getattr(traj.config, key)) if traj.config is not None else default


def _require(traj: Trajectory, count: int, name: str):
    if len(traj) < count:
        raise ValueError(f"{name} needs at least {count} samples, trajectory has {len(traj)}")


def corrected_cumulative_trapezoid(t: np.ndarray, y: np.ndarray, dy: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Cumulative ∫ y dt with the Euler-Maclaurin endpoint correction
    h²/12 (y'(a) - y'(b)) per cell when the derivative is known.
    """
    out = cumulative_trapezoid(y, t, initial=0.0)
    if dy is not None and np.all(np.isfinite(dy)):
        h = np.diff(t)
        out[1:] += np.cumsum(h * h / 12.0 * (dy[:-1] - dy[1:]))
    return out


# ---------------------------------------------------------------------------
# Energy relation
# ---------------------------------------------------------------------------

def energy_check(traj: Trajectory) -> InequalityReport:
    _require(traj, 2, "energy check")
    t = traj.times
    E = traj.series('l2') ** 2
    y = traj.series('dirichlet') ** 2
    dy = traj.series('ddt_dirichlet_sq')

    dissipated = 2.0 * corrected_cumulative_trapezoid(t, y, dy)
    lhs = E + dissipated
    rhs = np.full_like(lhs, E[0])

    dt = traj.time_step()
    horizon = float(t[-1] - t[0])
    tol = max(_tolerance(traj, 'tol_energy', DEFAULT_TOL_ENERGY) * E[0],
              _tolerance(traj, 'tol_energy_c', DEFAULT_TOL_ENERGY_C) * dt ** 4 * horizon)

    failures = []
    growth = np.diff(E)
    if growth.size and np.max(growth) > tol:
        i = int(np.argmax(growth))
        failures.append(f"‖v‖₂² increases by {growth[i]:.3e} between t={t[i]:.6g} and t={t[i + 1]:.6g}")

    deficit = np.abs(lhs - rhs)
    details = {
        'initial_energy': float(E[0]),
        'max_abs_deficit': float(np.max(deficit)),
        'relative_deficit': float(np.max(deficit) / E[0]) if E[0] > 0 else 0.0,
    }
    return InequalityReport('energy', t, lhs, rhs, tol, failures=failures, details=details)


# ---------------------------------------------------------------------------
# Agmon constant
# ---------------------------------------------------------------------------

def agmon_ratio(f: SpectralField) -> Optional[float]:
    """sup / (‖PΔf‖₂‖∇f‖₂)^{1/2} with the grid sup; None for the zero field"""
    b = norms(f)
    den = math.sqrt(b.laplacian_l2 * b.dirichlet)
    if den == 0.0:
        return None
    return b.sup / den


@dataclass(frozen=True)
class AgmonEstimate:
    N: int
    trials: int
    seed: int
    c_hat: float
    reference_ratio: float
    ratios: Tuple[float, ...]
    skipped: int

    def calibrated(self, margin: float = DEFAULT_AGMON_MARGIN) -> float:
        return calibrated_agmon_constant(self.c_hat, margin)

    def to_dict(self, margin: float = DEFAULT_AGMON_MARGIN) -> dict:
        return {
            'N': self.N, 'trials': self.trials, 'seed': self.seed,
            'c_hat': self.c_hat, 'reference_ratio': self.reference_ratio,
            'margin': margin, 'c': self.calibrated(margin), 'skipped': self.skipped,
            'ratio_max_random': max(self.ratios) if self.ratios else None,
            'ratio_median_random': float(np.median(self.ratios)) if self.ratios else None,
        }


@lru_cache(maxsize=16)
def estimate_agmon_constant(N: int, trials: int = DEFAULT_AGMON_TRIALS,
                            seed: int = DEFAULT_AGMON_SEED) -> AgmonEstimate:
    """
    ĉ = max Agmon ratio over random divergence-free fields with spectral
    slopes drawn from AGMON_SLOPE_RANGE, plus the single-mode and
    Taylor-Green reference flows. Zero fields are skipped.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)

    references = [agmon_ratio(make_field(name, N)) for name in ('kolmogorov:1', 'taylor_green:1')]
    reference_ratio = max(r for r in references if r is not None)

    ratios, skipped = [], 0
    for _ in range(trials):
        slope = float(rng.uniform(*AGMON_SLOPE_RANGE))
        sub_seed = int(rng.integers(0, 2 ** 31 - 1))
        r = agmon_ratio(make_field(DatumSpec('random', 1.0, sub_seed, slope), N))
        if r is None or not math.isfinite(r):
            skipped += 1
            continue
        ratios.append(r)

    c_hat = max([reference_ratio] + ratios)
    Logger.info(f"📐 Agmon ratio max over {len(ratios)} fields at N={N}: ĉ={c_hat:.6f} "
                f"(single-mode reference {reference_ratio:.6f}, skipped {skipped})")
    return AgmonEstimate(N=N, trials=trials, seed=seed, c_hat=c_hat, reference_ratio=reference_ratio,
                         ratios=tuple(ratios), skipped=skipped)


def calibrated_agmon_constant(c_hat: float, margin: float = DEFAULT_AGMON_MARGIN) -> float:
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    return c_hat * (1.0 + margin)


def resolve_agmon_constant(traj: Trajectory, c: Optional[float] = None) -> float:
    """Explicit c, else the configured agmon_c, else the calibrated estimate at the run's N"""
    if c is not None:
        if not c > 0:
            raise ValueError(f"Agmon constant must be positive, got {c}")
        return float(c)
    config = traj.config
    if config is not None and config.agmon_c is not None:
        return float(config.agmon_c)
    if config is None:
        N, trials, margin, seed = 16, DEFAULT_AGMON_TRIALS, DEFAULT_AGMON_MARGIN, DEFAULT_AGMON_SEED
    else:
        N, trials, margin = config.N, config.agmon_trials, config.agmon_margin
        seed = config.seed if config.seed is not None else DEFAULT_AGMON_SEED
    return estimate_agmon_constant(N, trials, seed).calibrated(margin)


def agmon_check(traj: Trajectory, c: Optional[float] = None) -> InequalityReport:
    _require(traj, 1, "agmon check")
    c = resolve_agmon_constant(traj, c)
    lhs = traj.series('sup')
    rhs = c * np.sqrt(traj.series('laplacian_l2') * traj.series('dirichlet'))
    tol = 1e-12 * max(1.0, float(np.max(rhs)))
    return InequalityReport('agmon', traj.times, lhs, rhs, tol, details={'c': c})


# ---------------------------------------------------------------------------
# Fractional D² bound
# ---------------------------------------------------------------------------

def ds_bound_check(traj: Trajectory, alpha: float = DEFAULT_ALPHA, c: Optional[float] = None) -> InequalityReport:
    _require(traj, 1, "ds bound check")
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must be in (0, 2], got {alpha}")
    t = traj.times
    lap = traj.series('laplacian_l2')
    y = traj.series('dirichlet') ** 2

    if len(traj) == 1:
        integral_alpha = np.zeros(1)
        Y = np.zeros(1)
    else:
        integral_alpha = cumulative_trapezoid(lap ** alpha, t, initial=0.0)
        Y = cumulative_trapezoid(y, t, initial=0.0)

    details = {'alpha': alpha, 'ds_integral': float(integral_alpha[-1])}
    if not math.isclose(alpha, DEFAULT_ALPHA):
        # only finiteness is asserted away from α = 2/3
        lhs = integral_alpha
        rhs = np.where(np.isfinite(lhs), np.inf, -np.inf)
        return InequalityReport('ds', t, lhs, rhs, 0.0, details=details)

    c = resolve_agmon_constant(traj, c)
    lhs = 0.5 * integral_alpha ** 3
    rhs = (t - t[0] + Y) ** 2 * (math.atan(y[0]) + c * Y)
    tol = DEFAULT_TOL_DS * max(1.0, float(np.max(rhs)))
    details.update({'c': c, 'majorant': float(rhs[-1])})
    return InequalityReport('ds', t, lhs, rhs, tol, details=details)


# ---------------------------------------------------------------------------
# Dirichlet-norm differential inequality
# ---------------------------------------------------------------------------

def _dirichlet_derivative(traj: Trajectory) -> np.ndarray:
    """Centered differences inside, the equation's derivative at both ends"""
    t = traj.times
    y = traj.series('dirichlet') ** 2
    exact = traj.series('ddt_dirichlet_sq')
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    d[0] = exact[0]
    d[-1] = exact[-1]
    return d


def _ddn_lhs(traj: Trajectory, ddt: np.ndarray) -> np.ndarray:
    return ddt + traj.series('laplacian_l2') ** 2 + traj.series('vt_l2') ** 2


def ddn_residual(traj: Trajectory) -> InequalityReport:
    _require(traj, 3, "ddn residual")
    t = traj.times
    y = traj.series('dirichlet') ** 2
    d = _dirichlet_derivative(traj)
    lhs = _ddn_lhs(traj, d)
    rhs = traj.series('sup_bound') ** 2 * y

    spacing = float(np.max(np.diff(t)))
    third = 0.0
    if len(traj) >= 4:
        third = float(np.max(np.abs(np.diff(y, 3)))) / float(np.mean(np.diff(t))) ** 3
    scale = float(np.nanmax(np.abs(lhs - d))) if lhs.size else 0.0
    tol = max(_tolerance(traj, 'tol_ddn', DEFAULT_TOL_DDN) * max(1.0, scale),
              _tolerance(traj, 'tol_ddn_c', DEFAULT_TOL_DDN_C) * spacing ** 2 * third)

    details = {
        'residual_at_start': float(lhs[0] - rhs[0]),
        'max_residual': float(np.nanmax(lhs - rhs)),
        'sample_spacing': spacing,
        'max_third_derivative': third,
    }
    return InequalityReport('ddn', t, lhs, rhs, tol, details=details)


def dn_identity_check(traj: Trajectory) -> InequalityReport:
    _require(traj, 1, "dn identity check")
    lhs = _ddn_lhs(traj, traj.series('ddt_dirichlet_sq'))
    rhs = traj.series('nonlinear_l2') ** 2
    scale = traj.series('laplacian_l2') ** 2 + traj.series('vt_l2') ** 2
    tol = DEFAULT_TOL_IDENTITY * max(1.0, float(np.nanmax(scale)))
    return InequalityReport('dn', traj.times, lhs, rhs, tol, two_sided=True)


def ddn_agmon_check(traj: Trajectory, c: Optional[float] = None) -> InequalityReport:
    _require(traj, 1, "ddn agmon check")
    c = resolve_agmon_constant(traj, c)
    lhs = _ddn_lhs(traj, traj.series('ddt_dirichlet_sq'))
    rhs = c * c * traj.series('laplacian_l2') * traj.series('dirichlet') ** 3
    scale = traj.series('laplacian_l2') ** 2 + traj.series('vt_l2') ** 2
    tol = DEFAULT_TOL_IDENTITY * max(1.0, float(np.nanmax(scale)))
    return InequalityReport('ddn_agmon', traj.times, lhs, rhs, tol, details={'c': c})


# ---------------------------------------------------------------------------
# Weak formulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeWindow:
    """ψ(τ) = cos²(πτ / 2τ₁) on [0, τ₁), zero afterwards; C¹ with ψ(0) = 1"""
    end: float

    def __post_init__(self):
        if not self.end > 0:
            raise ValueError(f"window end must be positive, got {self.end}")

    def value(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        w = np.pi / (2.0 * self.end)
        return np.where(tau < self.end, np.cos(w * tau) ** 2, 0.0)

    def derivative(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        w = np.pi / (2.0 * self.end)
        return np.where(tau < self.end, -w * np.sin(2.0 * w * tau), 0.0)


@dataclass(frozen=True)
class TestFunction:
    """φ(τ, x) = ψ(τ) ê e^{-ik·x} with ê ⊥ k"""
    __test__ = False

    mode: Tuple[int, int, int]
    window: TimeWindow
    polarization: Optional[Tuple[float, float, float]] = None

    def unit_polarization(self) -> np.ndarray:
        k = np.asarray(self.mode, dtype=float)
        if self.polarization is None:
            e = np.zeros(3)
            e[int(np.argmin(np.abs(k)))] = 1.0
        else:
            e = np.asarray(self.polarization, dtype=float)
        e = e - k * (k @ e) / (k @ k)
        norm = np.linalg.norm(e)
        if norm == 0.0:
            raise ValueError(f"polarization {self.polarization} is parallel to mode {self.mode}")
        return e / norm

    def label(self) -> str:
        return f"k={tuple(self.mode)},tau1={self.window.end:g}"


def _mode_index(mode: Sequence[int], N: int, scheme: Scheme) -> Tuple[int, int, int]:
    k = np.asarray(mode, dtype=int)
    if k.shape != (3,) or not np.any(k):
        raise ValueError(f"test mode must be a nonzero integer 3-vector, got {mode}")
    if np.any(np.abs(k) >= N // 2):
        raise ValueError(f"test mode {tuple(k)} beyond resolution N={N}")
    index = tuple(int(v) % N for v in k)
    if scheme.kind == 'galerkin' and not galerkin_mask(N, scheme.cutoff)[index]:
        raise ValueError(f"test mode {tuple(k)} beyond Galerkin cutoff K={scheme.cutoff:g}")
    return index


def random_test_set(N: int, count: int, horizon: float, seed: int = 0,
                    cutoff: Optional[float] = None) -> List[TestFunction]:
    """Pseudo-random low modes with windows ending in (0.5, 0.9]·horizon"""
    rng = np.random.default_rng(seed)
    reach = N // 2 - 1
    if cutoff is not None:
        reach = min(reach, int(math.floor(cutoff)))
    if reach < 1:
        raise ValueError(f"no admissible test modes at N={N}")
    tests = []
    while len(tests) < count:
        k = rng.integers(-reach, reach + 1, size=3)
        if not np.any(k) or (cutoff is not None and k @ k > cutoff * cutoff):
            continue
        end = horizon * float(rng.uniform(0.5, 0.9))
        tests.append(TestFunction(tuple(int(v) for v in k), TimeWindow(end)))
    return tests


def weak_form_residual(traj: Trajectory, test_set: Iterable[TestFunction]) -> InequalityReport:
    """
    For each test function the identity

        ∫ [(v, φ_τ) - (∇v, ∇φ) + (a·∇φ, v)] dτ + (v(0), φ(0)) = 0

    is evaluated spectrally by trapezoid over the samples; the residual is
    normalized by the sum of absolute integrand magnitudes.
    """
    tests = list(test_set)
    _require(traj, 2, "weak form residual")
    fields = traj.fields()
    t = traj.times
    N = fields[0].N
    scheme = traj.scheme()

    indices = [_mode_index(test.mode, N, scheme) for test in tests]
    for test in tests:
        if test.window.end > t[-1] + 1e-12:
            raise ValueError(f"test window end {test.window.end:g} beyond trajectory end {t[-1]:g}")

    # (2π)³ times the coefficient and nonlinear part at each test mode, per sample
    coeff = np.zeros((len(t), len(tests), 3), dtype=complex)
    nonlin = np.zeros_like(coeff)
    for s, f in enumerate(fields):
        nl = nonlinear_part(f, scheme)
        for j, index in enumerate(indices):
            coeff[s, j] = f.coeffs[(slice(None),) + index]
            nonlin[s, j] = nl[(slice(None),) + index]

    spacing = float(np.max(np.diff(t)))
    tol_weak = _tolerance(traj, 'tol_weak', DEFAULT_TOL_WEAK)
    residuals, allowances = [], []
    for j, test in enumerate(tests):
        e = test.unit_polarization()
        k2 = float(np.dot(test.mode, test.mode))
        g = TWO_PI_CUBED * coeff[:, j] @ e
        n = TWO_PI_CUBED * nonlin[:, j] @ e
        psi = test.window.value(t - t[0])
        dpsi = test.window.derivative(t - t[0])

        integrand = dpsi * g - psi * k2 * g + psi * n
        residual = trapezoid(integrand, t) + psi[0] * g[0]
        scale = (trapezoid(np.abs(dpsi * g) + psi * k2 * np.abs(g) + psi * np.abs(n), t)
                 + abs(psi[0] * g[0]))
        residuals.append(abs(residual) / scale if scale > 0 else 0.0)
        # trapezoid error of an integrand varying at rate π/τ₁ + |k|²
        allowances.append((spacing * (np.pi / test.window.end + k2)) ** 2)

    residuals = np.array(residuals)
    details = {'tests': [test.label() for test in tests], 'relative_residuals': residuals.tolist()}
    return InequalityReport('weak', np.arange(len(tests), dtype=float), residuals,
                            np.array(allowances), tol_weak, axis='test', details=details)
