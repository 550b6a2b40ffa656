"""
EPOCHS
======

Regularity-epoch analysis of a trajectory:

1. θ = ‖v₀‖₂⁴/η² and the pigeonhole time t^m < θ with ‖v₀‖₂‖∇v(t^m)‖₂ <= η
2. global Riccati bound ‖∇v(t)‖₂² <= η²‖v₀‖₂⁻²(1 - 2cη²)⁻¹ for t >= θ
3. cover of [0, θ] by local regularity intervals (t, t + c(‖∇v(t)‖₂² + 1)⁻²]
   seeded at valid sample times, merged into disjoint epochs, plus the
   terminal epoch (θ, T] when the Riccati bound holds; epochs are then
   extended to maximal intervals while ‖∇v‖₂² stays below 2(‖∇v(seed)‖₂² + 1)
4. regularity integrals ∫‖PΔv‖₂² and ∫‖v_t‖₂² on every epoch
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from dynamics import Trajectory
from estimates import InequalityReport
from lab_logger import Logger

TIME_MATCH_TOL = 1e-9


class HorizonTooShort(ValueError):
    def __init__(self, required: float, available: float):
        self.required = float(required)
        self.available = float(available)
        super().__init__(f"trajectory ends at T={available:.6g} but the analysis needs "
                         f"T >= θ = η⁻²‖v₀‖₂⁴ = {required:.6g}")


class PigeonholeContradiction(ValueError):
    """No small-Dirichlet time before θ: the trajectory violates the energy relation"""

    def __init__(self, theta_value: float, dissipation: float, initial_energy: float):
        self.theta = float(theta_value)
        self.dissipation = float(dissipation)
        self.initial_energy = float(initial_energy)
        super().__init__(
            f"no sample t < θ={theta_value:.6g} with ‖v₀‖₂‖∇v(t)‖₂ <= η; "
            f"2∫₀^θ‖∇v‖₂² = {dissipation:.6g} vs ‖v₀‖₂² = {initial_energy:.6g} "
            f"(solver accuracy error)")


def theta(v0_l2: float, eta: float) -> float:
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if v0_l2 < 0:
        raise ValueError(f"‖v₀‖₂ must be >= 0, got {v0_l2}")
    return v0_l2 ** 4 / eta ** 2


def local_interval(grad_l2_sq: float, c: float) -> float:
    """Guaranteed regularity length c(‖∇v(t)‖₂² + 1)⁻² from a sample"""
    if grad_l2_sq < 0 or math.isnan(grad_l2_sq):
        raise ValueError(f"‖∇v‖₂² must be >= 0, got {grad_l2_sq}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    return c / (grad_l2_sq + 1.0) ** 2


def find_small_dirichlet_time(traj: Trajectory, eta: float) -> float:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    t = traj.times
    v0 = float(traj.series('l2')[0])
    dirichlet = traj.series('dirichlet')
    th = theta(v0, eta)

    if v0 == 0.0:
        return float(t[0])
    hits = np.nonzero((t < th) & (v0 * dirichlet <= eta))[0]
    if hits.size:
        return float(t[hits[0]])

    if t[-1] < th:
        raise HorizonTooShort(th, t[-1])
    cover = t <= th
    dissipation = 2.0 * trapezoid(dirichlet[cover] ** 2, t[cover])
    raise PigeonholeContradiction(th, dissipation, v0 ** 2)


def riccati_global_bound(traj: Trajectory, t_m: float, eta: float, c: float) -> InequalityReport:
    """
    ‖∇v(t)‖₂² <= η²‖v₀‖₂⁻²(1 - 2cη²)⁻¹ at samples t >= θ, and the
    intermediate bound y(t^m)(1 - c y(t^m)‖v(t^m)‖₂²)⁻¹ at samples t >= t^m.
    Not applicable when 2cη² >= 1.
    """
    t = traj.times
    v0 = float(traj.series('l2')[0])
    th = theta(v0, eta)
    y = traj.series('dirichlet') ** 2
    l2 = traj.series('l2')
    details = {'theta': th, 't_m': t_m, 'c': c, 'eta': eta}

    if 2.0 * c * eta ** 2 >= 1.0:
        details['reason'] = f"2cη² = {2.0 * c * eta ** 2:.6g} >= 1"
        empty = np.zeros(0)
        return InequalityReport('riccati', empty, empty, empty, 0.0, applicable=False, details=details)

    bound = math.inf if v0 == 0.0 else eta ** 2 / v0 ** 2 / (1.0 - 2.0 * c * eta ** 2)
    details['bound'] = bound

    after = t >= th - TIME_MATCH_TOL
    times, lhs, rhs = list(t[after]), list(y[after]), [bound] * int(np.sum(after))

    i_m = int(np.argmin(np.abs(t - t_m)))
    bracket = 1.0 - c * y[i_m] * l2[i_m] ** 2
    details['intermediate_bracket'] = bracket
    if bracket > 0:
        intermediate = y[i_m] / bracket
        later = t >= t_m - TIME_MATCH_TOL
        details['intermediate_bound'] = intermediate
        details['intermediate_holds'] = bool(np.all(y[later] <= intermediate * (1.0 + 1e-12)))

    scale = 1.0 if math.isinf(bound) else max(1.0, bound)
    return InequalityReport('riccati', np.array(times), np.array(lhs), np.array(rhs),
                            1e-12 * scale, details=details)


@dataclass
class SampledSet:
    """Sample times with Dirichlet values, each flagged valid (converged) or not"""
    times: np.ndarray
    dirichlet: np.ndarray
    valid: np.ndarray
    laplacian_l2: Optional[np.ndarray] = None
    vt_l2: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.dirichlet = np.asarray(self.dirichlet, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.times.shape == self.dirichlet.shape == self.valid.shape):
            raise ValueError("times, dirichlet and valid must have the same length")
        order = np.argsort(self.times, kind='stable')
        self.times = self.times[order]
        self.dirichlet = self.dirichlet[order]
        self.valid = self.valid[order]
        if self.laplacian_l2 is not None:
            self.laplacian_l2 = np.asarray(self.laplacian_l2, dtype=float)[order]
        if self.vt_l2 is not None:
            self.vt_l2 = np.asarray(self.vt_l2, dtype=float)[order]

    @classmethod
    def from_trajectory(cls, traj: Trajectory, flags: Optional[pd.DataFrame] = None) -> 'SampledSet':
        """All samples valid unless a flags frame (columns t, converged) marks them otherwise"""
        t = traj.times
        valid = np.ones(t.shape, dtype=bool)
        if flags is not None:
            valid = flags_to_validity(t, flags)
        return cls(t, traj.series('dirichlet'), valid,
                   laplacian_l2=traj.series('laplacian_l2'), vt_l2=traj.series('vt_l2'))

    def __len__(self):
        return self.times.size


def flags_to_validity(times: np.ndarray, flags: pd.DataFrame) -> np.ndarray:
    """Samples without a matching flag row are invalid"""
    if 't' not in flags.columns or 'converged' not in flags.columns:
        raise ValueError("convergence flags need columns 't' and 'converged'")
    ft = flags['t'].to_numpy(dtype=float)
    fc = flags['converged'].astype(str).str.strip().str.lower().isin(['true', '1', 'yes']).to_numpy()
    valid = np.zeros(times.shape, dtype=bool)
    scale = max(1.0, float(np.max(np.abs(times)))) if times.size else 1.0
    for i, ti in enumerate(times):
        hit = np.nonzero(np.abs(ft - ti) <= TIME_MATCH_TOL * scale)[0]
        valid[i] = bool(hit.size) and bool(fc[hit[0]])
    return valid


@dataclass
class Epoch:
    start: float
    end: float
    seed: float
    seed_dirichlet_sq: float
    within_riccati_bound: bool = True
    terminal: bool = False
    integral_laplacian: Optional[float] = None
    integral_vt: Optional[float] = None
    guaranteed_end: Optional[float] = None

    @property
    def length(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {
            'start': self.start, 'end': self.end, 'seed': self.seed,
            'seed_dirichlet_sq': self.seed_dirichlet_sq, 'guaranteed_end': self.guaranteed_end,
            'within_riccati_bound': self.within_riccati_bound, 'terminal': self.terminal,
            'integral_laplacian': self.integral_laplacian, 'integral_vt': self.integral_vt,
        }


@dataclass
class EpochReport:
    theta: float
    c: float
    epochs: List[Epoch] = field(default_factory=list)
    uncovered_measure: float = 0.0
    eta: Optional[float] = None
    t_m: Optional[float] = None
    global_bound: Optional[InequalityReport] = None

    @property
    def global_bound_holds(self) -> bool:
        return self.global_bound is not None and self.global_bound.applicable and self.global_bound.passed

    def to_dict(self) -> dict:
        gb = {'holds': False, 'value': None, 'applicable': False}
        if self.global_bound is not None:
            gb = {
                'holds': self.global_bound_holds,
                'value': self.global_bound.details.get('bound'),
                'applicable': self.global_bound.applicable,
                'status': self.global_bound.status,
            }
        return {
            'eta': self.eta, 'theta': self.theta, 't_m': self.t_m, 'c': self.c,
            'global_bound': gb,
            'epochs': [e.to_dict() for e in self.epochs],
            'uncovered_measure': self.uncovered_measure,
        }

    def format_table(self) -> str:
        lines = [
            f"θ = {self.theta:.6g}   t^m = {'-' if self.t_m is None else f'{self.t_m:.6g}'}   "
            f"c = {self.c:.6g}   uncovered = {self.uncovered_measure:.6g}",
            f"{'#':>3}  {'start':>12}  {'end':>12}  {'seed':>12}  {'∫‖PΔv‖²':>14}  {'∫‖v_t‖²':>14}  note",
        ]
        for i, e in enumerate(self.epochs):
            note = 'terminal' if e.terminal else ('' if e.within_riccati_bound else 'above local bound')
            lap = '-' if e.integral_laplacian is None else f"{e.integral_laplacian:.6g}"
            vt = '-' if e.integral_vt is None else f"{e.integral_vt:.6g}"
            lines.append(f"{i:>3}  {e.start:>12.6g}  {e.end:>12.6g}  {e.seed:>12.6g}  {lap:>14}  {vt:>14}  {note}")
        return "\n".join(lines)


def _integrate_between(t: np.ndarray, f: np.ndarray, a: float, b: float) -> float:
    """Trapezoid of the piecewise-linear interpolant of f over [a, b]"""
    if b <= a:
        return 0.0
    inside = (t > a) & (t < b)
    ts = np.concatenate(([a], t[inside], [b]))
    fs = np.concatenate(([np.interp(a, t, f)], f[inside], [np.interp(b, t, f)]))
    return float(trapezoid(fs, ts))


def _series_integrals(series: SampledSet, a: float, b: float) -> Tuple[Optional[float], Optional[float]]:
    t = series.times
    a, b = max(a, t[0]), min(b, t[-1])
    lap = None if series.laplacian_l2 is None else _integrate_between(t, series.laplacian_l2 ** 2, a, b)
    vt = None
    if series.vt_l2 is not None and np.all(np.isfinite(series.vt_l2)):
        vt = _integrate_between(t, series.vt_l2 ** 2, a, b)
    return lap, vt


def _regular_samples(series: SampledSet, y: np.ndarray) -> np.ndarray:
    """Samples whose Dirichlet value and regularity integrands are finite"""
    ok = np.isfinite(y)
    for values in (series.laplacian_l2, series.vt_l2):
        if values is not None:
            ok &= np.isfinite(values)
    return ok


def build_epoch_cover(series: SampledSet, theta_value: float, c: float,
                      terminal_end: Optional[float] = None, eta: Optional[float] = None,
                      t_m: Optional[float] = None,
                      global_bound: Optional[InequalityReport] = None,
                      extend: bool = True) -> EpochReport:
    """
    Seeds in increasing time order. A valid sample outside the current epoch
    seeds a new one; a valid sample inside it (t <= end) extends its end to
    max(end, t + local_interval). Overlapping intervals therefore merge and
    disjoint ones stay apart. Invalid samples never seed.

    With ``extend`` every epoch is then pushed right sample by sample, valid
    or not, while the Dirichlet value stays below the local Riccati bound
    2(y_seed + 1) and the regularity integrands stay finite. Valid samples
    reached this way chain as above, so epochs the extension makes touch
    merge. ``guaranteed_end`` is the furthest local-interval reach among the
    epoch's valid samples.

    Epochs are clipped to [0, θ]; ``terminal_end`` appends (θ, terminal_end].
    """
    if len(series) == 0:
        raise ValueError("empty series")
    t, y = series.times, series.dirichlet ** 2
    regular = _regular_samples(series, y)

    epochs: List[Epoch] = []
    current = None
    for ti, yi, ok in zip(t, y, series.valid):
        if ti > theta_value:
            break
        if current is not None and ti <= current.end:
            if ok:
                reach = ti + local_interval(float(yi), c)
                current.end = max(current.end, reach)
                current.guaranteed_end = max(current.guaranteed_end, reach)
                if yi > 2.0 * (current.seed_dirichlet_sq + 1.0):
                    current.within_riccati_bound = False
        elif ok:
            reach = float(ti + local_interval(float(yi), c))
            current = Epoch(start=float(ti), end=reach, seed=float(ti), seed_dirichlet_sq=float(yi),
                            guaranteed_end=reach)
            epochs.append(current)
        else:
            continue
        if extend:
            limit = 2.0 * (current.seed_dirichlet_sq + 1.0)
            j = int(np.searchsorted(t, current.end, side='right'))
            while j < t.size and current.end < theta_value and regular[j] and y[j] <= limit:
                current.end = float(t[j])
                j += 1

    cover = []
    for e in epochs:
        e.end = min(e.end, theta_value)
        e.guaranteed_end = min(e.guaranteed_end, e.end)
        if e.length > 0:
            e.integral_laplacian, e.integral_vt = _series_integrals(series, e.start, e.end)
            cover.append(e)

    uncovered = uncovered_measure(t, cover, theta_value)

    if terminal_end is not None and terminal_end > theta_value:
        seed_y = float(np.interp(theta_value, t, y))
        terminal = Epoch(start=float(theta_value), end=float(terminal_end), seed=float(theta_value),
                         seed_dirichlet_sq=seed_y, terminal=True)
        terminal.integral_laplacian, terminal.integral_vt = _series_integrals(series, terminal.start, terminal.end)
        cover.append(terminal)

    return EpochReport(theta=float(theta_value), c=float(c), epochs=cover, uncovered_measure=uncovered,
                       eta=eta, t_m=t_m, global_bound=global_bound)


def uncovered_measure(times: np.ndarray, epochs: List[Epoch], theta_value: float) -> float:
    """Total length of grid cells [t_i, t_{i+1}] ∩ [0, θ] not contained in one epoch"""
    t = np.asarray(times, dtype=float)
    t = t[t <= theta_value]
    if t.size == 0:
        return 0.0
    edges = t if t[-1] >= theta_value else np.append(t, theta_value)
    total = 0.0
    spans = [(e.start, e.end) for e in epochs if not e.terminal]
    for a, b in zip(edges[:-1], edges[1:]):
        if not any(s <= a and b <= e for s, e in spans):
            total += b - a
    return float(total)


def regularity_integrals(traj: Trajectory, interval: Tuple[float, float]) -> Tuple[float, float]:
    """(∫‖PΔv‖₂², ∫‖v_t‖₂²) over the interval by trapezoid"""
    a, b = float(interval[0]), float(interval[1])
    t = traj.times
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    slack = TIME_MATCH_TOL * max(1.0, abs(t[-1]))
    if b < a or a < t[0] - slack or b > t[-1] + slack:
        raise ValueError(f"interval ({a:g}, {b:g}) outside trajectory span [{t[0]:g}, {t[-1]:g}]")
    a, b = max(a, t[0]), min(b, t[-1])
    return (_integrate_between(t, traj.series('laplacian_l2') ** 2, a, b),
            _integrate_between(t, traj.series('vt_l2') ** 2, a, b))


def analyze_epochs(traj: Trajectory, eta: float, c: float,
                   flags: Optional[pd.DataFrame] = None, extend: bool = True) -> EpochReport:
    """Full pipeline: θ, t^m, Riccati bound, cover, regularity integrals"""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    v0 = float(traj.series('l2')[0])
    th = theta(v0, eta)
    t_end = float(traj.times[-1])
    if t_end < th:
        raise HorizonTooShort(th, t_end)

    t_m = find_small_dirichlet_time(traj, eta)
    Logger.info(f"⏱ θ = {th:.6g}, t^m = {t_m:.6g}")
    riccati = riccati_global_bound(traj, t_m, eta, c)
    riccati.log()

    holds = riccati.applicable and riccati.passed
    series = SampledSet.from_trajectory(traj, flags)
    report = build_epoch_cover(series, th, c, terminal_end=t_end if holds else None,
                               eta=eta, t_m=t_m, global_bound=riccati, extend=extend)
    Logger.success(f"✅ Epoch cover: {len(report.epochs)} epochs, uncovered measure {report.uncovered_measure:.6g}")
    return report
