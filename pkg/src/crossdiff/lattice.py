"""Site-exchange master equation on a 1-D lattice and its diffusion limit.

Particles of species i hop from site j to a neighbouring site k at rate
``sigma0 * p_i(u^j) * q(u_{n+1}^k)`` per unit occupancy, with
``sigma0 = h^-2``.  Hops through the two domain walls are suppressed, so the
lattice is reflecting and total occupancy of each species is conserved.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .entropy import vacancy
from .grid import Grid1D
from .models import ModelSpec
from .stepper import SchemeParams, run_simulation

logger = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-12


class LatticeInstability(RuntimeError):
    pass


@dataclass
class LatticeState:
    h: float
    occupancies: np.ndarray

    def __post_init__(self):
        self.occupancies = np.atleast_2d(np.asarray(self.occupancies, dtype=float))
        if not self.h > 0:
            raise ValueError("lattice spacing must be positive")
        u = self.occupancies
        if np.any(u < -NEGATIVITY_TOL) or np.any(vacancy(u) < -NEGATIVITY_TOL):
            raise ValueError("occupancies leave [0, 1] or overfill a site")

    @property
    def M(self) -> int:
        return self.occupancies.shape[1]

    @property
    def sigma0(self) -> float:
        return self.h ** -2

    @property
    def sites(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.h

    def masses(self) -> np.ndarray:
        return self.occupancies.sum(axis=-1) * self.h


@dataclass
class LatticeTrajectory:
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    h: float = 0.0


def _rates(u, sigma0, model):
    p = model.p(u)
    q = model.qspec.q(np.clip(vacancy(u), 0.0, 1.0))
    right = np.zeros_like(u)
    left = np.zeros_like(u)
    right[:, :-1] = sigma0 * p[:, :-1] * q[None, 1:]
    left[:, 1:] = sigma0 * p[:, 1:] * q[None, :-1]
    return right, left


def _rhs(u, sigma0, model):
    right, left = _rates(u, sigma0, model)
    out_right = right * u
    out_left = left * u
    du = -(out_right + out_left)
    du[:, 1:] += out_right[:, :-1]
    du[:, :-1] += out_left[:, 1:]
    return du


def transition_rates(state: LatticeState, model: ModelSpec):
    """Per-occupancy hop rates ``(right, left)``, each of shape (n, M).

    ``right[i, j]`` is the rate from site j to j+1; the last column of
    ``right`` and the first of ``left`` are zero (reflecting walls).
    """
    return _rates(state.occupancies, state.sigma0, model)


def master_rhs(state: LatticeState, model: ModelSpec) -> np.ndarray:
    return _rhs(state.occupancies, state.sigma0, model)


def _rate_scale(u, model):
    return float(np.max(model.p(u)) * np.max(model.qspec.q(np.clip(vacancy(u), 0.0, 1.0))))


def integrate_lattice(state: LatticeState, model: ModelSpec, T: float, dt: Optional[float] = None,
                      cfl: float = 0.2, stride: int = 0) -> LatticeTrajectory:
    """Classic RK4 to time T.

    Without ``dt`` the step is ``cfl * h^2 / max(p q)``, recomputed every step.
    ``stride > 0`` stores every stride-th state; the final state is always kept.
    """
    u = state.occupancies.copy()
    h = state.h
    traj = LatticeTrajectory(times=[0.0], states=[u.copy()], h=h)

    sigma0 = state.sigma0

    def rhs(v):
        return _rhs(v, sigma0, model)

    t, k = 0.0, 0
    while t < T * (1 - 1e-14):
        step = dt if dt is not None else cfl * h * h / max(_rate_scale(u, model), 1e-300)
        step = min(step, T - t)
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * step * k1)
        k3 = rhs(u + 0.5 * step * k2)
        k4 = rhs(u + step * k3)
        u = u + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += step
        k += 1
        lo = min(float(np.min(u)), float(np.min(vacancy(u))))
        if not np.all(np.isfinite(u)) or lo < -NEGATIVITY_TOL:
            raise LatticeInstability(
                f"lattice occupancy left [0, 1] at t={t:.4g} (min {lo:.3e}); use a smaller dt")
        if stride and k % stride == 0:
            traj.times.append(t)
            traj.states.append(u.copy())
    if traj.times[-1] != t:
        traj.times.append(t)
        traj.states.append(u.copy())
    return traj


@dataclass(frozen=True)
class LimitRow:
    h: float
    err_max: float
    err_l2: float
    order_estimate: float
    mass_drift: float


def reference_solution(model: ModelSpec, profile, T: float, cells: int = 400, tau: float = 2e-5,
                       richardson: bool = True):
    """Fine-grid PDE solution at time T, returned as (grid, values).

    With ``richardson`` the runs at tau and tau/2 are combined to cancel the
    first-order time error of implicit Euler.
    """
    grid = Grid1D(1.0, cells)
    u0 = np.atleast_2d(profile(grid.x))
    fine = run_simulation(model, grid, u0, T, SchemeParams(tau=tau / 2), output_stride=10 ** 9)
    values = fine.fields[-1]
    if richardson:
        coarse = run_simulation(model, grid, u0, T, SchemeParams(tau=tau), output_stride=10 ** 9)
        values = 2.0 * values - coarse.fields[-1]
    return grid, values


def diffusion_limit_study(model: ModelSpec, profile, T: float, h_list: Sequence[float],
                          reference=None, cfl: float = 0.2) -> List[LimitRow]:
    """Lattice vs PDE errors at time T for each spacing in ``h_list``.

    ``profile`` maps positions to an (n, len(x)) array of occupancies.  The
    reference (default: :func:`reference_solution`) is linearly interpolated
    to the lattice sites.  ``order_estimate`` is
    log(e_prev/e) / log(h_prev/h), NaN on the first row.
    """
    h_list = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing")
    if reference is None:
        reference = reference_solution(model, profile, T)
    ref_grid, ref_values = reference
    rows: List[LimitRow] = []
    for h in h_list:
        M = int(round(1.0 / h))
        if abs(M * h - 1.0) > 1e-12:
            raise ValueError(f"spacing {h} does not tile the unit interval")
        state = LatticeState(h, np.atleast_2d(profile((np.arange(M) + 0.5) * h)))
        mass0 = state.masses()
        traj = integrate_lattice(state, model, T, cfl=cfl)
        uT = traj.states[-1]
        ref = np.vstack([np.interp(state.sites, ref_grid.x, r) for r in ref_values])
        diff = uT - ref
        err_max = float(np.max(np.abs(diff)))
        err_l2 = float(np.sqrt(np.sum(diff * diff) * h))
        order = float("nan")
        if rows:
            prev = rows[-1]
            order = float(np.log(prev.err_max / err_max) / np.log(prev.h / h))
        drift = float(np.max(np.abs(uT.sum(axis=-1) * h - mass0)))
        rows.append(LimitRow(h, err_max, err_l2, order, drift))
        logger.info("lattice h=%g: err_max=%.3e err_l2=%.3e order=%.2f", h, err_max, err_l2, order)
    return rows
