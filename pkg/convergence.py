"""
CONVERGENCE
===========

Cauchy diagnostics across approximation levels (Galerkin cutoffs or
mollification indices). For consecutive levels a < b with difference
d = u^a - u^b (zero-padded to a common resolution):

    lhs = ∫₀ᵀ ‖∇d‖₂ dτ   <=   rhs = ∫₀ᵀ ‖PΔd‖₂^{1/2} ‖d‖₂^{1/2} dτ

A sample time is flagged converged when the finest pair distance
‖∇d(t)‖₂ has not grown against the previous pair and is below
tol_conv·‖∇v₀‖₂. The flags feed the valid-sample set of the epoch cover.
"""

import asyncio
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from dynamics import SolverConfig, Trajectory, run
from lab_logger import Logger
from spectral_core import sobolev_norms, thread_count

INTERPOLATION_RTOL = 1e-11
ROUNDOFF_RTOL = 1e-12               # distances below this (relative to ‖∇v₀‖₂) are noise
MIN_LEVELS = 3


@dataclass
class CauchyPair:
    a: float
    b: float
    times: np.ndarray
    distance: np.ndarray           # ‖∇d(t)‖₂
    interpolation: np.ndarray      # (‖PΔd(t)‖₂‖d(t)‖₂)^{1/2}
    lhs: float
    rhs: float
    label: str = ''

    @property
    def pointwise_holds(self) -> bool:
        slack = INTERPOLATION_RTOL * np.maximum(1.0, self.interpolation)
        return bool(np.all(self.distance <= self.interpolation + slack))

    @property
    def holds(self) -> bool:
        return self.pointwise_holds and self.lhs <= self.rhs + INTERPOLATION_RTOL * max(1.0, self.rhs)

    def to_dict(self) -> dict:
        out = {'a': self.a, 'b': self.b, 'lhs': self.lhs, 'rhs': self.rhs, 'holds': self.holds}
        if self.label:
            out['label'] = self.label
        return out


def compare_trajectories(traj_a: Trajectory, traj_b: Trajectory, a: float = 0.0, b: float = 0.0,
                         label: str = '') -> CauchyPair:
    if len(traj_a) != len(traj_b) or not np.allclose(traj_a.times, traj_b.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories are sampled on different time grids")
    if len(traj_a) == 0:
        raise ValueError("empty trajectories")

    distance, interpolation = [], []
    for fa, fb in zip(traj_a.fields(), traj_b.fields()):
        M = max(fa.N, fb.N)
        l2, dirichlet, laplacian = sobolev_norms(fa.padded(M) - fb.padded(M))
        distance.append(dirichlet)
        interpolation.append(math.sqrt(laplacian * l2))

    t = traj_a.times
    distance = np.array(distance)
    interpolation = np.array(interpolation)
    if t.size > 1:
        lhs, rhs = float(trapezoid(distance, t)), float(trapezoid(interpolation, t))
    else:
        lhs = rhs = 0.0
    pair = CauchyPair(a=a, b=b, times=t, distance=distance, interpolation=interpolation,
                      lhs=lhs, rhs=rhs, label=label)
    if not pair.holds:
        Logger.error(f"❌ interpolation inequality violated for levels {a:g}/{b:g}: lhs={lhs:.6e} rhs={rhs:.6e}")
    return pair


def cauchy_diagnostic(traj_a: Trajectory, traj_b: Trajectory) -> Tuple[float, float]:
    """(∫‖∇(u^a - u^b)‖₂, ∫‖PΔ(u^a - u^b)‖₂^{1/2}‖u^a - u^b‖₂^{1/2}) by trapezoid"""
    pair = compare_trajectories(traj_a, traj_b)
    return pair.lhs, pair.rhs


@dataclass
class ConvergenceReport:
    scheme: str
    levels: List[float]
    pairs: List[CauchyPair]
    times: np.ndarray
    converged: np.ndarray
    tol_conv: float
    threshold: float
    blowups: Dict[float, float] = field(default_factory=dict)
    cross_family: Optional[CauchyPair] = None

    @property
    def holds(self) -> bool:
        return all(p.holds for p in self.pairs)

    @property
    def lhs_nonincreasing(self) -> bool:
        lhs = [p.lhs for p in self.pairs]
        return all(b <= a for a, b in zip(lhs, lhs[1:]))

    @property
    def truncated(self) -> bool:
        return bool(self.blowups)

    def flags_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'t': self.times, 'converged': self.converged.astype(bool)})

    def to_dict(self) -> dict:
        out = {
            'scheme': self.scheme,
            'levels': list(self.levels),
            'pairs': [p.to_dict() for p in self.pairs],
            'per_time': [{'t': float(t), 'converged': bool(c)} for t, c in zip(self.times, self.converged)],
            'tol_conv': self.tol_conv,
            'threshold': self.threshold,
            'holds': self.holds,
            'lhs_nonincreasing': self.lhs_nonincreasing,
            'blowups': {repr(k): v for k, v in self.blowups.items()},
        }
        if self.cross_family is not None:
            out['cross_family'] = self.cross_family.to_dict()
        return out


def convergence_flags(pairs: Sequence[CauchyPair], threshold: float, floor: float = 0.0) -> np.ndarray:
    """Distances at or below ``floor`` are round-off and count as not growing"""
    last = pairs[-1].distance
    previous = pairs[-2].distance if len(pairs) > 1 else np.full_like(last, np.inf)
    return ((last <= previous) | (last <= floor)) & (last <= threshold)


async def _run_all(configs: Sequence[SolverConfig], max_parallel: int) -> List[Trajectory]:
    semaphore = asyncio.Semaphore(max(1, max_parallel))

    async def run_one(config: SolverConfig) -> Trajectory:
        async with semaphore:
            return await asyncio.to_thread(run, config, True)

    return list(await asyncio.gather(*(run_one(c) for c in configs)))


def run_levels(configs: Sequence[SolverConfig], max_parallel: Optional[int] = None) -> List[Trajectory]:
    """Run independent configurations concurrently, results in input order"""
    return asyncio.run(_run_all(configs, max_parallel or thread_count()))


def _validate_levels(levels: Sequence[float]) -> List[float]:
    levels = [float(level) for level in levels]
    if len(levels) < MIN_LEVELS:
        raise ValueError(f"convergence sweep needs at least {MIN_LEVELS} levels, got {len(levels)}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly increasing, got {levels}")
    return levels


def convergence_sweep(config: SolverConfig, levels: Sequence[float],
                      max_parallel: Optional[int] = None, cross_family_m: Optional[float] = None) -> ConvergenceReport:
    levels = _validate_levels(levels)
    configs = [config.with_level(level).validate() for level in levels]
    Logger.info(f"🔁 Convergence sweep ({config.scheme}) over levels {levels}")

    trajs = run_levels(configs, max_parallel)
    blowups = {level: tr.blowup_time for level, tr in zip(levels, trajs) if tr.truncated}
    count = min(len(tr) for tr in trajs)
    if blowups:
        Logger.warning(f"⚠️ blow-up at levels {sorted(blowups)}; sweep truncated to {count} common samples")
    trajs = [tr.prefix(count) for tr in trajs]

    pairs = [compare_trajectories(trajs[i], trajs[i + 1], levels[i], levels[i + 1])
             for i in range(len(levels) - 1)]
    for p in pairs:
        Logger.verify(f"  levels {p.a:g} -> {p.b:g}: lhs={p.lhs:.6e}  rhs={p.rhs:.6e}")

    grad0 = float(trajs[-1].series('dirichlet')[0])
    threshold = config.tol_conv * grad0 if grad0 > 0 else config.tol_conv
    converged = convergence_flags(pairs, threshold, ROUNDOFF_RTOL * max(1.0, grad0))

    cross = None
    if cross_family_m is not None:
        cross = cross_family_diagnostic(config, levels[-1] if config.scheme == 'galerkin' else None,
                                        cross_family_m, max_parallel)

    report = ConvergenceReport(scheme=config.scheme, levels=levels, pairs=pairs, times=trajs[0].times,
                               converged=converged, tol_conv=config.tol_conv, threshold=threshold,
                               blowups=blowups, cross_family=cross)
    Logger.success(f"✅ {int(np.sum(converged))}/{converged.size} sample times converged; "
                   f"Cauchy trend {'nonincreasing' if report.lhs_nonincreasing else 'NOT monotone'}")
    return report


def cross_family_diagnostic(config: SolverConfig, cutoff: Optional[float], m: float,
                            max_parallel: Optional[int] = None) -> CauchyPair:
    """Galerkin(cutoff) against mollified(m) from the same datum"""
    if cutoff is None:
        cutoff = math.floor(config.N / 3)
    galerkin = replace(config, scheme='galerkin', cutoff=float(cutoff), modes=None)
    mollified = replace(config, scheme='mollified', m=float(m))
    traj_g, traj_m = run_levels([galerkin.validate(), mollified.validate()], max_parallel)
    count = min(len(traj_g), len(traj_m))
    pair = compare_trajectories(traj_g.prefix(count), traj_m.prefix(count), float(cutoff), float(m),
                                label=f"galerkin(K={cutoff:g}) vs mollified(m={m:g})")
    Logger.verify(f"  cross-family {pair.label}: lhs={pair.lhs:.6e}  rhs={pair.rhs:.6e}")
    return pair
