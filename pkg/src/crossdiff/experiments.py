"""Experiment drivers: steady states, decay fits, uniqueness and positivity probes."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .entropy import StatePoint, relative_entropy, vacancy
from .grid import Field, Grid1D, dissipation_functionals, gajewski_distance, hminus1_seminorm
from .lattice import LimitRow, diffusion_limit_study, reference_solution
from .models import ModelSpec, compute_constants, get_model, has_unit_p
from .stepper import SchemeParams, StepFailure, Trajectory, run_simulation

logger = logging.getLogger(__name__)

ENVELOPE_SLACK = 0.05
MONOTONE_TOL = 1e-9


class FitWindowError(ValueError):
    """The decay-fit window holds too few or non-positive distances."""


class PreconditionError(ValueError):
    pass


def steady_state(u0: Field) -> StatePoint:
    """Spatial means of the initial data; mass conservation makes them the limit."""
    return StatePoint(u0.values.sum(axis=-1) * u0.grid.dx / u0.grid.length)


def _l2(f, grid: Grid1D) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(f) ** 2, axis=-1) * grid.dx)


def _is_nonincreasing(values, tol_scale=None) -> bool:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return True
    scale = 1.0 + np.abs(v[:-1]) if tol_scale is None else tol_scale
    return bool(np.all(np.diff(v) <= MONOTONE_TOL * scale))


def integrated_relative_entropy(values, uinf: StatePoint, model: ModelSpec, grid: Grid1D) -> float:
    return float(np.sum(relative_entropy(values, uinf.u, model).total) * grid.dx)


def compute_series(traj: Trajectory, model: ModelSpec, uinf: StatePoint) -> Dict[str, np.ndarray]:
    """Per-snapshot diagnostics keyed by the series CSV column names."""
    grid = traj.grid
    n = model.n
    cols: Dict[str, list] = {"t": [], "entropy": [], "rel_entropy": [], "dissipation_1": [],
                             "dissipation_2": []}
    for i in range(n):
        cols[f"mass_{i + 1}"] = []
    for i in range(n + 1):
        cols[f"dist_l2_{i + 1}"] = []
    full_inf = uinf.full[:, None]
    for t, values in zip(traj.times, traj.fields):
        fld = Field(values, grid)
        diss = dissipation_functionals(fld, model)
        cols["t"].append(t)
        cols["entropy"].append(diss.entropy)
        cols["rel_entropy"].append(integrated_relative_entropy(values, uinf, model, grid))
        cols["dissipation_1"].append(diss.grad_sqrt_u_term)
        cols["dissipation_2"].append(diss.grad_sqrt_q_term)
        for i, m in enumerate(diss.masses):
            cols[f"mass_{i + 1}"].append(m)
        for i, d in enumerate(_l2(fld.full - full_inf, grid)):
            cols[f"dist_l2_{i + 1}"].append(d)
    return {k: np.asarray(v, dtype=float) for k, v in cols.items()}


@dataclass
class DecayFit:
    component: int
    lambda_hat: float
    c_hat: float
    r_squared: float
    window: tuple
    C1: Optional[float] = None
    envelope_ok: Optional[bool] = None
    rel_entropy_monotone: Optional[bool] = None
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def decay_fit(traj: Trajectory, uinf: StatePoint, which: Optional[int] = None,
              model: Optional[ModelSpec] = None, window_start: float = 0.2,
              c_s: Optional[float] = None, c_l: Optional[float] = None) -> DecayFit:
    """Least-squares exponential rate of ||u_which(t) - u_which^inf||_{L^2} on [ws T, T].

    ``which`` is 1-based over all n + 1 fractions (default: the vacancy).
    With ``model`` the envelope C1 exp(-lambda_hat t) (5% slack) is checked
    on every snapshot, with C1 = (2/gamma)^{1/2} (int h*(u0|u_inf))^{1/2}, and
    the relative entropy is checked to be nonincreasing.  ``c_s`` and ``c_l``
    enable the predicted rates c0 q1 / (4 c_s) and c0 q0 / c_l.
    """
    if len(traj.times) < 10:
        raise FitWindowError(f"decay fit needs >= 10 snapshots, got {len(traj.times)}")
    grid = traj.grid
    n = traj.fields[0].shape[0]
    which = n + 1 if which is None else which
    if not 1 <= which <= n + 1:
        raise ValueError(f"component must be in 1..{n + 1}")
    times = np.asarray(traj.times)
    full = [np.vstack([f, vacancy(f)]) for f in traj.fields]
    ref = uinf.full[which - 1]
    dist = np.array([_l2(f[which - 1] - ref, grid) for f in full])
    T = times[-1]
    sel = times >= window_start * T
    if sel.sum() < 3:
        raise FitWindowError("fewer than 3 snapshots in the fit window")
    floor = 1e-13 * max(1.0, float(np.max(np.abs(ref))))
    if np.any(dist[sel] <= floor):
        raise FitWindowError("distance to equilibrium vanishes inside the fit window")
    x, y = times[sel], np.log(dist[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    fit = DecayFit(which, float(-slope), float(np.exp(intercept)), r2, (float(x[0]), float(x[-1])))
    if not np.isfinite(fit.lambda_hat):
        raise FitWindowError("fitted rate is not finite")
    if model is not None:
        gamma = model.qspec.gamma
        rel = [integrated_relative_entropy(f, uinf, model, grid) for f in traj.fields]
        fit.rel_entropy_monotone = _is_nonincreasing(rel)
        if gamma is not None and np.isfinite(gamma) and gamma > 0:
            fit.C1 = float(np.sqrt(2.0 / gamma * max(rel[0], 0.0)))
            envelope = fit.C1 * np.exp(-fit.lambda_hat * times) * (1.0 + ENVELOPE_SLACK)
            fit.envelope_ok = bool(np.all(dist <= envelope))
        if c_s is not None or c_l is not None:
            const = compute_constants(model)
            if c_s is not None:
                fit.lambda1 = const.c0 * const.q1 / (4.0 * c_s)
            if c_l is not None:
                fit.lambda2 = const.c0 * const.q0 / c_l
    return fit


@dataclass
class UniquenessReport:
    times: np.ndarray
    gajewski: np.ndarray
    hminus1: np.ndarray
    final_l2_gap: float
    eps: float
    gajewski_monotone: bool
    hminus1_monotone: bool
    eps_sweep: Dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.gajewski_monotone and self.hminus1_monotone and self.final_l2_gap <= 1e-6

    def summary(self) -> dict:
        return {"eps": self.eps, "final_l2_gap": self.final_l2_gap,
                "gajewski_monotone": self.gajewski_monotone,
                "hminus1_monotone": self.hminus1_monotone,
                "max_gajewski": float(np.max(self.gajewski)) if self.gajewski.size else 0.0,
                "max_hminus1": float(np.max(self.hminus1)) if self.hminus1.size else 0.0,
                "snapshots_compared": int(self.times.size),
                "eps_sweep_max": {repr(k): float(np.max(v)) for k, v in self.eps_sweep.items()}}


def uniqueness_experiment(model: ModelSpec, grid: Grid1D, u0, T: float, params: SchemeParams,
                          tol_a: float = 1e-10, tol_b: float = 1e-8, jitter: float = 1e-9,
                          seed: int = 0, eps: float = 1e-6, eps_sweep: bool = False,
                          output_stride: int = 10) -> UniquenessReport:
    """Two runs from the same data with different inner tolerances and guess seeds.

    The Gajewski distance and the H^{-1} seminorm of the vacancy difference
    are compared at the snapshot times both runs share.
    """
    if not has_unit_p(model):
        raise PreconditionError("uniqueness experiment requires p_i == 1 for every species")
    pa = dataclasses.replace(params, picard_tol=tol_a, guess_jitter=0.0, seed=seed)
    pb = dataclasses.replace(params, picard_tol=tol_b, guess_jitter=jitter, seed=seed + 1)
    ta = run_simulation(model, grid, u0, T, pa, output_stride=output_stride)
    tb = run_simulation(model, grid, u0, T, pb, output_stride=output_stride)
    tb_index = {round(t, 12): k for k, t in enumerate(tb.times)}
    times, dg, dh = [], [], []
    sweep_eps = (1e-4, 1e-6, 1e-8) if eps_sweep else ()
    sweep: Dict[float, list] = {e: [] for e in sweep_eps}
    for k, t in enumerate(ta.times):
        j = tb_index.get(round(t, 12))
        if j is None:
            continue
        fu, fv = Field(ta.fields[k], grid), Field(tb.fields[j], grid)
        times.append(t)
        dg.append(gajewski_distance(fu, fv, eps))
        diff = fu.u_last - fv.u_last
        diff -= diff.mean()
        dh.append(hminus1_seminorm(diff, grid))
        for e in sweep_eps:
            sweep[e].append(gajewski_distance(fu, fv, e))
    gap = float(np.sqrt(np.sum((ta.fields[-1] - tb.fields[-1]) ** 2) * grid.dx))
    dg_arr, dh_arr = np.asarray(dg), np.asarray(dh)
    return UniquenessReport(np.asarray(times), dg_arr, dh_arr, gap, eps,
                            _is_nonincreasing(dg_arr, 1.0), _is_nonincreasing(dh_arr, 1.0),
                            {e: np.asarray(v) for e, v in sweep.items()})


def probe_initial(grid: Grid1D, n: int, probe_min: float = 1e-3) -> np.ndarray:
    """Vacancy 1/2 + (1/2 - probe_min) cos(pi x / L), shared equally by the species."""
    s = 0.5 + (0.5 - probe_min) * np.cos(np.pi * grid.x / grid.length)
    return np.tile((1.0 - s) / n, (n, 1))


@dataclass
class PositivityRow:
    model: str
    min_u_last: float
    completed: bool
    note: str = ""


def positivity_probe(grid: Grid1D, T: float, params: SchemeParams, n: int = 2,
                     alpha: float = 1.0, probe_min: float = 1e-3,
                     alpha_sweep: Sequence[float] = (), control: bool = True
                     ) -> List[PositivityRow]:
    """Minimum over space-time of the vacancy for q(s) = exp(-s^-alpha).

    The first row is the main probe (its failure propagates).  Sweep and
    control rows are exploratory: a failed run is recorded, not raised.
    """
    u0 = probe_initial(grid, n, probe_min)

    def probe(name):
        traj = run_simulation(get_model(name, n=n), grid, u0, T, params, output_stride=10 ** 9)
        return PositivityRow(name, traj.min_u_last, True)

    rows = [probe(f"vanishing-q:{alpha:g}")]
    extra = [f"vanishing-q:{a:g}" for a in alpha_sweep if a != alpha]
    if control:
        extra.append("ion-transport")
    for name in extra:
        try:
            rows.append(probe(name))
        except (StepFailure, RuntimeError, ValueError) as exc:
            logger.warning("positivity sweep run %s failed: %s", name, exc)
            rows.append(PositivityRow(name, float("nan"), False, str(exc)))
    return rows


def lattice_experiment(model: ModelSpec, T: float, h_list: Sequence[float], profile,
                       ref_cells: int = 400, ref_tau: float = 2e-5) -> List[LimitRow]:
    """Diffusion-limit study on [0, 1]; ``profile(x)`` returns (n, len(x)) occupancies."""
    reference = reference_solution(model, profile, T, cells=ref_cells, tau=ref_tau)
    return diffusion_limit_study(model, profile, T, h_list, reference=reference)
