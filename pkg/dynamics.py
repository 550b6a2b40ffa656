"""
DYNAMICS
========

Right-hand sides of the two approximating systems and their time integration:

- galerkin:  Fourier-Galerkin truncation to the ball |k| <= K, every retained
             coefficient is one c_h(t) of the Galerkin ODE system
- mollified: the advecting velocity is replaced by its mollification J_m v

Viscosity is 1. Time stepping is integrating-factor RK4 (viscous factor
e^{-|k|²dt} applied exactly), so single-mode linear flows are reproduced
to round-off for every dt.
"""

import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from lab_logger import Logger
from spectral_core import (
    DEFAULT_MOLLIFIER, MOLLIFIER_KERNELS, TWO_PI_CUBED, DatumSpec, NormBundle,
    SpectralField, enforce_invariants, k_squared, make_field, mollify,
    nonlinear_term, norms, parse_datum, retained_mask, spectral_inner,
    validate_resolution,
)

#  RUN DEFAULTS
DEFAULT_DT = 1e-3
DEFAULT_T = 1.0
DEFAULT_DATUM = 'taylor_green:1'
DEFAULT_SAMPLE_EVERY = 10
DEFAULT_ETA = 0.5                    # pigeonhole parameter
DEFAULT_AGMON_MARGIN = 0.5           # c = ĉ(1 + margin)
DEFAULT_AGMON_TRIALS = 64
DEFAULT_BLOWUP_GUARD = 1e8           # on the certified sup bound

#  TOLERANCES
DEFAULT_TOL_ENERGY = 1e-6            # relative to ‖v₀‖₂²
DEFAULT_TOL_ENERGY_C = 10.0          # C in C·dt⁴·T
DEFAULT_TOL_DDN = 1e-8               # relative floor
DEFAULT_TOL_DDN_C = 1.0              # C in C·Δs²·max|y'''|
DEFAULT_TOL_WEAK = 1e-6
DEFAULT_TOL_CONV = 1e-4              # relative to ‖∇v₀‖₂

SCHEMES = ('galerkin', 'mollified')
PROGRESS_FRACTION = 0.1


class ConfigError(ValueError):
    """Invalid run configuration; ``keys`` names every offending key"""

    def __init__(self, keys, message: str):
        self.keys = (keys,) if isinstance(keys, str) else tuple(keys)
        super().__init__(message)


class BlowUpError(RuntimeError):
    def __init__(self, t: float, reason: str):
        self.t = float(t)
        self.reason = reason
        super().__init__(f"blow-up at t={self.t:.6g}: {reason}")


@dataclass(frozen=True)
class Scheme:
    kind: str
    cutoff: Optional[float] = None
    m: Optional[float] = None
    kernel: str = DEFAULT_MOLLIFIER

    @classmethod
    def galerkin(cls, cutoff: float) -> 'Scheme':
        if not cutoff > 0:
            raise ValueError(f"Galerkin cutoff must be positive, got {cutoff!r}")
        return cls('galerkin', cutoff=float(cutoff))

    @classmethod
    def mollified(cls, m: float, kernel: str = DEFAULT_MOLLIFIER) -> 'Scheme':
        if not m >= 1:
            raise ValueError(f"mollification index must be >= 1, got {m!r}")
        return cls('mollified', m=float(m), kernel=kernel)

    @classmethod
    def navier_stokes(cls) -> 'Scheme':
        """Untruncated, unmollified dynamics at the grid resolution"""
        return cls('mollified', m=math.inf)

    def label(self) -> str:
        if self.kind == 'galerkin':
            return f"galerkin(K={self.cutoff:g})"
        if self.kernel != DEFAULT_MOLLIFIER:
            return f"mollified(m={self.m:g},{self.kernel})"
        return f"mollified(m={self.m:g})"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off', ''):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_times(text: str) -> Tuple[float, ...]:
    items = [s for s in str(text).replace(';', ',').split(',') if s.strip()]
    return tuple(float(s) for s in items)


def _parse_optional_float(text: str) -> Optional[float]:
    text = str(text).strip()
    return None if text.lower() in ('', 'none', 'auto') else float(text)


def _parse_optional_int(text: str) -> Optional[int]:
    text = str(text).strip()
    return None if text.lower() in ('', 'none') else int(text)


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


@dataclass(frozen=True)
class SolverConfig:
    N: int
    scheme: str = 'galerkin'
    cutoff: Optional[float] = None
    modes: Optional[int] = None
    m: Optional[float] = None
    mollifier: str = DEFAULT_MOLLIFIER
    dt: float = DEFAULT_DT
    T: float = DEFAULT_T
    datum: str = DEFAULT_DATUM
    seed: Optional[int] = None
    sample_every: int = DEFAULT_SAMPLE_EVERY
    eta: float = DEFAULT_ETA
    agmon_c: Optional[float] = None
    agmon_margin: float = DEFAULT_AGMON_MARGIN
    agmon_trials: int = DEFAULT_AGMON_TRIALS
    tol_energy: float = DEFAULT_TOL_ENERGY
    tol_energy_c: float = DEFAULT_TOL_ENERGY_C
    tol_ddn: float = DEFAULT_TOL_DDN
    tol_ddn_c: float = DEFAULT_TOL_DDN_C
    tol_weak: float = DEFAULT_TOL_WEAK
    tol_conv: float = DEFAULT_TOL_CONV
    blowup_guard: float = DEFAULT_BLOWUP_GUARD
    snapshot_times: Tuple[float, ...] = ()
    field_archive: bool = False
    out: str = 'ns_lab_out'

    _PARSERS = {
        'N': _parse_int, 'scheme': str, 'cutoff': _parse_optional_float,
        'modes': _parse_optional_int, 'm': _parse_optional_float, 'mollifier': str,
        'dt': float, 'T': float, 'datum': str, 'seed': _parse_optional_int,
        'sample_every': _parse_int, 'eta': float, 'agmon_c': _parse_optional_float,
        'agmon_margin': float, 'agmon_trials': _parse_int, 'tol_energy': float,
        'tol_energy_c': float, 'tol_ddn': float, 'tol_ddn_c': float, 'tol_weak': float,
        'tol_conv': float, 'blowup_guard': float, 'snapshot_times': _parse_times,
        'field_archive': _parse_bool, 'out': str,
    }

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Optional[str]]) -> 'SolverConfig':
        """Build and validate a config from key=value strings (dotenv_values output)"""
        bad_keys, problems, values = [], [], {}
        known = set(cls.keys())
        for key, raw in mapping.items():
            if key not in known:
                bad_keys.append(key)
                problems.append(f"unknown key '{key}'")
                continue
            if raw is None:
                bad_keys.append(key)
                problems.append(f"'{key}' has no value")
                continue
            try:
                values[key] = cls._PARSERS[key](raw.strip() if isinstance(raw, str) else raw)
            except (TypeError, ValueError):
                bad_keys.append(key)
                problems.append(f"'{key}' has invalid value {raw!r}")
        if 'N' not in values and 'N' not in bad_keys:
            bad_keys.append('N')
            problems.append("'N' is required")
        if bad_keys:
            raise ConfigError(bad_keys, "; ".join(problems))
        return cls(**values).validate()

    def validate(self) -> 'SolverConfig':
        bad_keys, problems = [], []

        def bad(key, message):
            bad_keys.append(key)
            problems.append(f"'{key}' {message}")

        try:
            validate_resolution(self.N)
        except ValueError as e:
            bad('N', str(e))

        if self.scheme not in SCHEMES:
            bad('scheme', f"must be one of {', '.join(SCHEMES)}, got {self.scheme!r}")
        elif self.scheme == 'galerkin':
            if self.cutoff is None and self.modes is None:
                bad('cutoff', "or 'modes' is required for the galerkin scheme")
            elif 'N' not in bad_keys:
                try:
                    K = self.resolved_cutoff()
                    if not K > 0:
                        bad('cutoff', f"must be positive, got {K!r}")
                    elif K > self.N / 3.0 + 1e-12:
                        bad('cutoff', f"must be <= N/3 = {self.N / 3.0:g} for exact dealiasing, got {K:g}")
                except ValueError as e:
                    bad('modes', str(e))
        else:
            if self.m is None or not self.m >= 1:
                bad('m', f"must be >= 1 for the mollified scheme, got {self.m!r}")
            if self.mollifier not in MOLLIFIER_KERNELS:
                bad('mollifier', f"must be one of {', '.join(MOLLIFIER_KERNELS)}, got {self.mollifier!r}")

        if not (math.isfinite(self.dt) and self.dt > 0):
            bad('dt', f"must be a positive finite time step, got {self.dt!r}")
        if not (math.isfinite(self.T) and self.T > 0):
            bad('T', f"must be a positive finite horizon, got {self.T!r}")
        elif 'dt' not in bad_keys:
            steps = self.T / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                bad('T', f"must be an integer multiple of dt={self.dt!r}")
        if self.sample_every < 1:
            bad('sample_every', f"must be >= 1, got {self.sample_every}")
        if not self.eta > 0:
            bad('eta', f"must be positive, got {self.eta!r}")
        if self.agmon_c is not None and not self.agmon_c > 0:
            bad('agmon_c', f"must be positive, got {self.agmon_c!r}")
        if not self.agmon_margin >= 0:
            bad('agmon_margin', f"must be >= 0, got {self.agmon_margin!r}")
        if self.agmon_trials < 1:
            bad('agmon_trials', f"must be >= 1, got {self.agmon_trials}")
        for key in ('tol_energy', 'tol_energy_c', 'tol_ddn', 'tol_ddn_c', 'tol_weak', 'tol_conv'):
            value = getattr(self, key)
            if not (math.isfinite(value) and value >= 0):
                bad(key, f"must be a finite nonnegative tolerance, got {value!r}")
        if not self.blowup_guard > 0:
            bad('blowup_guard', f"must be positive, got {self.blowup_guard!r}")
        if any(not (0 <= s <= self.T) for s in self.snapshot_times):
            bad('snapshot_times', f"must lie in [0, T={self.T!r}]")
        try:
            self.datum_spec()
        except ValueError as e:
            bad('datum', str(e))

        if bad_keys:
            raise ConfigError(bad_keys, "; ".join(problems))
        return self

    def resolved_cutoff(self) -> float:
        if self.cutoff is not None:
            return float(self.cutoff)
        return cutoff_for_mode_count(self.modes, self.N)

    def resolved_scheme(self) -> Scheme:
        if self.scheme == 'galerkin':
            return Scheme.galerkin(self.resolved_cutoff())
        return Scheme.mollified(self.m, self.mollifier)

    def datum_spec(self) -> DatumSpec:
        spec = parse_datum(self.datum)
        if self.seed is not None:
            spec = replace(spec, seed=int(self.seed))
        return spec

    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_level(self, level: float) -> 'SolverConfig':
        """Same run at another Galerkin cutoff or mollification index"""
        if self.scheme == 'galerkin':
            return replace(self, cutoff=float(level), modes=None)
        return replace(self, m=float(level))

    def to_mapping(self) -> dict:
        """Config echo as key=value strings; from_mapping(to_mapping()) reproduces the config"""
        out = {}
        for key in self.keys():
            value = getattr(self, key)
            if value is None:
                continue
            if isinstance(value, bool):
                out[key] = 'true' if value else 'false'
            elif isinstance(value, tuple):
                out[key] = ','.join(repr(float(v)) for v in value)
            elif isinstance(value, float):
                out[key] = repr(value)
            else:
                out[key] = str(value)
        return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# Galerkin mode sets
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def galerkin_mask(N: int, cutoff: float) -> np.ndarray:
    mask = (k_squared(N) <= cutoff * cutoff + 1e-9) & retained_mask(N)
    mask.setflags(write=False)
    return mask


def cutoff_for_mode_count(n: int, N: int) -> float:
    """
    Cutoff radius K holding the first n Stokes eigenfunctions. Each retained
    wavevector carries two divergence-free real modes; ties in |k|² are kept
    together so the mode set is a ball.
    """
    if n is None or n < 1:
        raise ValueError(f"mode count must be >= 1, got {n!r}")
    N = validate_resolution(N)
    k2 = k_squared(N)[retained_mask(N)]
    eigenvalues = np.repeat(np.sort(k2), 2)
    if n > eigenvalues.size:
        raise ValueError(f"mode count {n} exceeds the {eigenvalues.size} modes available at N={N}")
    return math.sqrt(float(eigenvalues[n - 1]))


def galerkin_truncate(f: SpectralField, cutoff: float) -> SpectralField:
    """Projection onto the first Stokes eigenfunctions, Σ (f, a^p) a^p"""
    return SpectralField(f.coeffs * galerkin_mask(f.N, float(cutoff)))


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def advecting_field(u: SpectralField, scheme: Scheme) -> SpectralField:
    if scheme.kind == 'mollified' and math.isfinite(scheme.m):
        return mollify(u, scheme.m, scheme.kernel)
    return u


def nonlinear_part(u: SpectralField, scheme: Scheme) -> np.ndarray:
    """-P[(a·∇)u] with a the scheme's advecting field, restricted to the scheme's modes"""
    nl = -nonlinear_term(advecting_field(u, scheme), u).coeffs
    if scheme.kind == 'galerkin':
        nl = nl * galerkin_mask(u.N, scheme.cutoff)
    return nl


def _check_support(u: SpectralField, cutoff: float):
    outside = u.coeffs * ~galerkin_mask(u.N, float(cutoff))
    scale = max(1.0, float(np.max(np.abs(u.coeffs))))
    if np.max(np.abs(outside)) > 1e-12 * scale:
        raise ValueError(f"field has support outside the Galerkin cutoff K={cutoff:g}")


def galerkin_rhs(u: SpectralField, cutoff: float) -> SpectralField:
    _check_support(u, cutoff)
    scheme = Scheme.galerkin(cutoff)
    return SpectralField(-k_squared(u.N) * u.coeffs + nonlinear_part(u, scheme))


def mollified_rhs(v: SpectralField, m: float, kernel: str = DEFAULT_MOLLIFIER) -> SpectralField:
    scheme = Scheme.mollified(m, kernel)
    return SpectralField(-k_squared(v.N) * v.coeffs + nonlinear_part(v, scheme))


def rhs(u: SpectralField, scheme: Scheme) -> SpectralField:
    if scheme.kind == 'galerkin':
        return galerkin_rhs(u, scheme.cutoff)
    return SpectralField(-k_squared(u.N) * u.coeffs + nonlinear_part(u, scheme))


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _integrating_factors(N: int, dt: float):
    k2 = k_squared(N)
    return np.exp(-k2 * dt), np.exp(-k2 * dt / 2.0)


def step(state: SpectralField, t: float, dt: float, scheme: Scheme) -> SpectralField:
    """One integrating-factor RK4 step from t to t + dt"""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt!r}")
    c = state.coeffs
    if not np.all(np.isfinite(c)):
        raise BlowUpError(t, "non-finite coefficients in state")

    N = state.N
    E, Eh = _integrating_factors(N, float(dt))

    def nl(x):
        return nonlinear_part(SpectralField(x), scheme)

    n1 = nl(c)
    n2 = nl(Eh * (c + 0.5 * dt * n1))
    n3 = nl(Eh * c + 0.5 * dt * n2)
    n4 = nl(E * c + dt * (Eh * n3))
    new = E * c + (dt / 6.0) * (E * n1 + 2.0 * Eh * (n2 + n3) + n4)

    new = enforce_invariants(new)
    if scheme.kind == 'galerkin':
        new = new * galerkin_mask(N, scheme.cutoff)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(t + dt, "non-finite coefficients after step")
    return SpectralField(new)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ['t', 'l2', 'dirichlet', 'laplacian_l2', 'sup', 'vt_l2']
EXTRA_COLUMNS = ['sup_bound', 'ddt_dirichlet_sq', 'nonlinear_l2']


@dataclass(frozen=True)
class Sample:
    t: float
    bundle: NormBundle
    ddt_dirichlet_sq: float         # exact d/dt ‖∇v‖₂² from the equation
    nonlinear_l2: float             # ‖P(a·∇v)‖₂
    field: Optional[SpectralField] = None


def measure_sample(u: SpectralField, t: float, scheme: Scheme, keep_field: bool = True) -> Sample:
    k2 = k_squared(u.N)
    nl = nonlinear_part(u, scheme)
    u_t = -k2 * u.coeffs + nl
    ddt = 2.0 * spectral_inner(k2 * u.coeffs, u_t)
    nonlinear_l2 = math.sqrt(max(spectral_inner(nl, nl), 0.0))
    bundle = norms(u, SpectralField(u_t), t)
    return Sample(t=float(t), bundle=bundle, ddt_dirichlet_sq=ddt,
                  nonlinear_l2=nonlinear_l2, field=u if keep_field else None)


@dataclass
class Trajectory:
    config: Optional[SolverConfig] = None
    samples: List[Sample] = field(default_factory=list)
    blowup_time: Optional[float] = None
    blowup_reason: Optional[str] = None

    def append(self, sample: Sample):
        if self.samples and not sample.t > self.samples[-1].t:
            raise ValueError(f"sample times must be strictly increasing: {sample.t} after {self.samples[-1].t}")
        self.samples.append(sample)

    def mark_blowup(self, t: float, reason: str):
        self.blowup_time = float(t)
        self.blowup_reason = reason

    def __len__(self):
        return len(self.samples)

    @property
    def truncated(self) -> bool:
        return self.blowup_time is not None

    @property
    def has_fields(self) -> bool:
        return bool(self.samples) and all(s.field is not None for s in self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    def series(self, name: str) -> np.ndarray:
        """Column by CSV name; absent values (vt_l2 of a bundle without f_t) are NaN"""
        out = []
        for s in self.samples:
            if name == 't':
                value = s.t
            elif name in ('ddt_dirichlet_sq', 'nonlinear_l2'):
                value = getattr(s, name)
            else:
                value = getattr(s.bundle, name)
            out.append(np.nan if value is None else value)
        return np.array(out, dtype=float)

    def fields(self) -> List[SpectralField]:
        if not self.has_fields:
            raise ValueError("trajectory carries no sampled fields (norm series only)")
        return [s.field for s in self.samples]

    def scheme(self) -> Scheme:
        if self.config is not None:
            return self.config.resolved_scheme()
        return Scheme.navier_stokes()

    def time_step(self) -> float:
        """Integrator step; falls back to the sample spacing for series without a config"""
        if self.config is not None:
            return self.config.dt
        t = self.times
        return float(np.max(np.diff(t))) if t.size > 1 else 0.0

    def prefix(self, count: int) -> 'Trajectory':
        return Trajectory(config=self.config, samples=list(self.samples[:count]),
                          blowup_time=self.blowup_time, blowup_reason=self.blowup_reason)

    def until(self, t_end: float) -> 'Trajectory':
        count = int(np.searchsorted(self.times, t_end + 1e-12, side='right'))
        return self.prefix(count)

    def to_frame(self) -> pd.DataFrame:
        columns = TRAJECTORY_COLUMNS + EXTRA_COLUMNS
        return pd.DataFrame({name: self.series(name) for name in columns}, columns=columns)


def run(config: SolverConfig, keep_fields: bool = True) -> Trajectory:
    """
    Integrate the configured scheme from the configured datum to T.

    Samples every ``sample_every`` steps plus the final step. On blow-up
    (non-finite state or certified sup bound above ``blowup_guard``) the
    trajectory stops at the last good sample and records the blow-up time.
    """
    config = config.validate()
    scheme = config.resolved_scheme()
    dt = config.dt
    n_steps = config.n_steps()

    u = make_field(config.datum_spec(), config.N)
    if scheme.kind == 'galerkin':
        u = galerkin_truncate(u, scheme.cutoff)

    traj = Trajectory(config=config)
    traj.append(measure_sample(u, 0.0, scheme, keep_fields))
    Logger.info(f"🚀 {scheme.label()} N={config.N} datum={config.datum} dt={dt:g} T={config.T:g} "
                f"({n_steps} steps, sample every {config.sample_every})")

    report_every = max(1, int(n_steps * PROGRESS_FRACTION))
    for n in range(1, n_steps + 1):
        t_prev = (n - 1) * dt
        t = config.T if n == n_steps else n * dt
        try:
            u = step(u, t_prev, dt, scheme)
        except BlowUpError as e:
            traj.mark_blowup(e.t, e.reason)
            Logger.error(f"💥 {e}")
            break

        sup_bound = float(np.sum(np.sqrt(np.sum(np.abs(u.coeffs) ** 2, axis=0))))
        if sup_bound > config.blowup_guard:
            traj.mark_blowup(t, f"sup bound {sup_bound:.3e} exceeds guard {config.blowup_guard:.3e}")
            Logger.error(f"💥 blow-up at t={t:.6g}: {traj.blowup_reason}")
            break

        if n % config.sample_every == 0 or n == n_steps:
            traj.append(measure_sample(u, t, scheme, keep_fields))
        if n % report_every == 0:
            last = traj.samples[-1].bundle
            Logger.info(f"  t={t:.4f}  ‖v‖₂={last.l2:.6e}  ‖∇v‖₂={last.dirichlet:.6e}")

    if not traj.truncated:
        Logger.success(f"✅ Run complete: {len(traj)} samples to T={traj.times[-1]:g}")
    return traj
