"""Implicit Euler in entropy variables with per-step entropy and mass audits.

The unknowns are the entropy variables ``w = h'(u)`` per cell; the volume
fractions ``u = (h')^{-1}(w)`` therefore always lie in the open set D.  One
step solves, cell by cell,

    (u(w) - u_old)/tau - div(B_face grad w) + tau^2 (w - div grad w) = f(u_old)

where the last term on the left is the optional H^1 regularization and
``f`` the optional explicit reaction source.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .diffusion import assemble_B
from .entropy import (InversionError, _batched, _unbatched, entropy_gradient, entropy_hessian,
                      invert_gradient, vacancy)
from .grid import DissipationReport, Field, Grid1D, cell_divergence, dissipation_functionals, \
    discrete_entropy, face_gradient
from .models import ModelSpec, ReactionSpec

logger = logging.getLogger(__name__)

BOUNDARY_MIX = 1e-8
INVERSION_TOL = 1e-13
MASS_TOL = 1e-12
ROUNDOFF_FACTOR = 16.0


class StepFailure(RuntimeError):
    """No acceptable step was found down to the minimal time step."""


class InnerSolveError(RuntimeError):
    pass


@dataclass
class SchemeParams:
    tau: float
    reg_enabled: bool = False
    picard_tol: float = 1e-10
    picard_max: int = 200
    newton_fallback: bool = True
    continuation_eta: bool = False
    tau_min: Optional[float] = None
    entropy_tol: float = 1e-9
    damping: float = 0.5
    newton_max: int = 30
    guess_jitter: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.tau_min is None:
            self.tau_min = self.tau / 2 ** 10
        if not self.tau > 0 or not self.tau_min > 0 or self.tau < self.tau_min:
            raise ValueError(f"need tau >= tau_min > 0, got tau={self.tau}, tau_min={self.tau_min}")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")


@dataclass
class StepReport:
    inner_iterations: int
    final_residual: float
    entropy_before: float
    entropy_after: float
    dissipation: DissipationReport
    mass_drift: np.ndarray
    tau_used: float
    accepted: bool
    step_dissipation: float = 0.0
    min_u_last: float = float("nan")
    retries: int = 0
    newton_used: bool = False
    state: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    fields: List[np.ndarray] = field(default_factory=list)
    reports: List[StepReport] = field(default_factory=list)
    grid: Optional[Grid1D] = None
    step_times: List[float] = field(default_factory=list)

    def field_at(self, k: int) -> Field:
        return Field(self.fields[k], self.grid)

    @property
    def min_u_last(self) -> float:
        vals = [float(np.min(vacancy(f))) for f in self.fields]
        vals += [r.min_u_last for r in self.reports]
        return min(vals)


# ---------------------------------------------------------------------------
# discrete operators

def face_B(u, model: ModelSpec) -> np.ndarray:
    """Arithmetic face average of the symmetrized B over interior faces, (n, n, N-1)."""
    B = assemble_B(u, model, margin=0.0, symmetrize=True)
    return 0.5 * (B[..., 1:] + B[..., :-1])


def diffusive_flux(w, Bf, grid: Grid1D) -> np.ndarray:
    gw = face_gradient(w, grid)
    F = np.zeros_like(gw)
    F[:, 1:-1] = np.einsum("ijf,jf->if", Bf, gw[:, 1:-1])
    return F


def apply_reaction(u, reaction: ReactionSpec, tau: float) -> np.ndarray:
    """Explicit reaction increment tau * f(u); refuses tau * c_f >= 1."""
    if tau * reaction.cf >= 1.0:
        raise ValueError(f"tau * c_f = {tau * reaction.cf:.3g} >= 1: entropy bound cannot "
                         "absorb the reaction term; reduce tau")
    return tau * reaction.rate(u)


class _StepProblem:
    """Frozen data of one implicit step."""

    def __init__(self, model, grid, u_old, tau, reg, source=None, eta=1.0):
        self.model, self.grid = model, grid
        self.u_old = u_old
        self.tau, self.reg, self.eta = tau, reg, eta
        self.source = source
        self.n, self.N = u_old.shape

    def state(self, w, guess):
        scale = 1.0 + np.max(np.abs(w), axis=0)
        return invert_gradient(w, self.model, guess=guess, tol=INVERSION_TOL * scale, polish=1)

    def residual(self, w, u):
        grid = self.grid
        Bf = face_B(u, self.model)
        R = self.eta * (u - self.u_old) / self.tau - cell_divergence(diffusive_flux(w, Bf, grid), grid)
        if self.reg:
            R += self.tau ** 2 * (w - cell_divergence(face_gradient(w, grid), grid))
        if self.source is not None:
            R -= self.eta * self.source / self.tau
        return R

    def roundoff_floor(self, w, u) -> float:
        """Residual level below which round-off, not the iterate, dominates.

        Each residual entry is a sum of terms of size |u|/tau and
        |B| |w| / dx^2 that cancel, and u(w) itself is only known to
        relative accuracy eps |w|; these magnitudes times machine epsilon
        bound the attainable accuracy.
        """
        dx2 = self.grid.dx ** 2
        Bf = np.abs(face_B(u, self.model))
        wa = np.abs(w)
        edge = np.einsum("ijf,jf->if", Bf, wa[:, 1:] + wa[:, :-1]) / dx2
        wmax = np.max(wa, axis=0)
        scale = (np.abs(u) * (2.0 + wmax) + np.abs(self.u_old)) / self.tau
        scale[:, 1:] += edge
        scale[:, :-1] += edge
        if self.reg:
            scale += self.tau ** 2 * wa * (1.0 + 4.0 / dx2)
        return float(ROUNDOFF_FACTOR * np.finfo(float).eps * np.max(scale))

    def linear_operator(self, u, mass_blocks) -> sp.csc_matrix:
        """Block tridiagonal matrix of  (eta/tau) M - div(B grad .) + reg."""
        n, N, dx2 = self.n, self.N, self.grid.dx ** 2
        Bf = face_B(u, self.model)
        eye = np.eye(n)
        diag = self.eta / self.tau * mass_blocks
        upper = -np.moveaxis(Bf, -1, 0) / dx2
        diag[:-1] -= upper
        diag[1:] -= upper
        if self.reg:
            t2 = self.tau ** 2
            diag += t2 * eye
            diag[:-1] += t2 / dx2 * eye
            diag[1:] += t2 / dx2 * eye
            upper = upper - t2 / dx2 * eye
        return _block_tridiag(diag, upper, np.swapaxes(upper, -1, -2))


def _block_tridiag(diag, upper, lower) -> sp.csc_matrix:
    N, n, _ = diag.shape
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rows, cols, vals = [], [], []
    cells = np.arange(N)
    rows.append((cells[:, None, None] * n + ii).ravel())
    cols.append((cells[:, None, None] * n + jj).ravel())
    vals.append(diag.ravel())
    c = cells[:-1]
    rows.append((c[:, None, None] * n + ii).ravel())
    cols.append(((c + 1)[:, None, None] * n + jj).ravel())
    vals.append(upper.ravel())
    rows.append(((c + 1)[:, None, None] * n + ii).ravel())
    cols.append((c[:, None, None] * n + jj).ravel())
    vals.append(lower.ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * n, N * n))
    return A.tocsc()


def _flat(a):
    return a.T.reshape(-1)


def _unflat(v, n):
    return v.reshape(-1, n).T


# ---------------------------------------------------------------------------
# public step API

def residual(w_new, w_old, params: SchemeParams, model: ModelSpec, grid: Grid1D,
             u_old=None, source=None, tau=None):
    """Per-cell residual (n, N) of the implicit step from ``w_old`` to ``w_new``."""
    w_new = np.asarray(w_new, dtype=float)
    if u_old is None:
        u_old = invert_gradient(np.asarray(w_old, dtype=float), model)
    prob = _StepProblem(model, grid, u_old, tau or params.tau, params.reg_enabled, source)
    return prob.residual(w_new, prob.state(w_new, u_old))


def picard_step(y, w_old, params: SchemeParams, model: ModelSpec, grid: Grid1D,
                u_old=None, eta: float = 1.0, source=None, tau=None, u_y=None):
    """One frozen-coefficient linear solve.

    With B = B(y) and the mass map linearized at y,

        (eta/tau)(u(y) + h''(u(y))^{-1}(w - y) - u_old) - div(B grad w) + reg(w) = source

    is solved for w.  A fixed point of this map solves the implicit step.
    """
    y = np.asarray(y, dtype=float)
    if u_old is None:
        u_old = invert_gradient(np.asarray(w_old, dtype=float), model)
    prob = _StepProblem(model, grid, u_old, tau or params.tau, params.reg_enabled, source, eta)
    if u_y is None:
        u_y = prob.state(y, u_old)
    return _picard_solve(prob, y, u_y)


def _picard_solve(prob: _StepProblem, y, u_y):
    H = _batched(entropy_hessian(u_y, prob.model, margin=0.0))
    mass = np.linalg.inv(H)
    mass = 0.5 * (mass + np.swapaxes(mass, -1, -2))
    K = prob.linear_operator(u_y, mass.copy())
    rhs_cells = (np.einsum("jab,bj->aj", mass, y) - (u_y - prob.u_old))
    rhs = prob.eta / prob.tau * rhs_cells
    if prob.source is not None:
        rhs = rhs + prob.eta * prob.source / prob.tau
    sol = splu(K).solve(_flat(rhs))
    return _unflat(sol, prob.n)


def _fd_jacobian(prob: _StepProblem, w, u, R):
    """Block tridiagonal Jacobian of the residual by 3n coloured differences."""
    n, N = prob.n, prob.N
    diag = np.zeros((N, n, n))
    sup = np.zeros((N - 1, n, n))
    sub = np.zeros((N - 1, n, n))
    cells = np.arange(N)
    for color in range(3):
        sel = cells % 3 == color
        for i in range(n):
            h = 1e-7 * (1.0 + np.abs(w[i, sel]))
            wp = w.copy()
            wp[i, sel] += h
            up = prob.state(wp, u)
            dR = prob.residual(wp, up) - R
            hcol = np.zeros(N)
            hcol[sel] = h
            for j in np.nonzero(sel)[0]:
                diag[j, :, i] = dR[:, j] / hcol[j]
                if j > 0:
                    sup[j - 1, :, i] = dR[:, j - 1] / hcol[j]
                if j < N - 1:
                    sub[j, :, i] = dR[:, j + 1] / hcol[j]
    return _block_tridiag(diag, sup, sub)


def _inner_solve(prob: _StepProblem, w0, params: SchemeParams):
    """Picard iterations with damping, then an optional Newton polish.

    Converged means max |R| <= picard_tol, or below the round-off floor of
    the residual evaluation when that floor is larger.
    """
    y = w0
    u = prob.state(y, prob.u_old)
    R = prob.residual(y, u)
    res = float(np.max(np.abs(R)))
    tol = max(params.picard_tol, prob.roundoff_floor(y, u))
    iters = 0
    stall = 0
    while res > tol and iters < params.picard_max:
        iters += 1
        w = _picard_solve(prob, y, u)
        lam = 1.0
        for _ in range(8):
            trial = y + lam * (w - y)
            try:
                ut = prob.state(trial, u)
            except InversionError:
                lam *= params.damping
                continue
            Rt = prob.residual(trial, ut)
            rt = float(np.max(np.abs(Rt)))
            if rt < res:
                break
            lam *= params.damping
        else:
            stall = 99
            break
        stall = stall + 1 if rt > 0.5 * res else 0
        y, u, R, res = trial, ut, Rt, rt
        tol = max(params.picard_tol, prob.roundoff_floor(y, u))
        if stall >= 5 and params.newton_fallback:
            break
    newton_used = False
    if res > tol and params.newton_fallback:
        newton_used = True
        for _ in range(params.newton_max):
            iters += 1
            J = _fd_jacobian(prob, y, u, R)
            step = _unflat(splu(J).solve(-_flat(R)), prob.n)
            lam, improved = 1.0, False
            for _ in range(20):
                trial = y + lam * step
                try:
                    ut = prob.state(trial, u)
                except InversionError:
                    lam *= 0.5
                    continue
                Rt = prob.residual(trial, ut)
                rt = float(np.max(np.abs(Rt)))
                if rt < res:
                    improved = True
                    break
                lam *= 0.5
            if not improved:
                break
            y, u, R, res = trial, ut, Rt, rt
            tol = max(params.picard_tol, prob.roundoff_floor(y, u))
            if res <= tol:
                break
    if not res <= tol:
        raise InnerSolveError(f"inner solve stalled at residual {res:.3e} after {iters} iterations")
    return y, u, res, iters, newton_used


def _attempt(w_old, u_old, tau, params: SchemeParams, model, grid, rng):
    source = apply_reaction(u_old, model.reaction, tau) if model.reaction is not None else None
    w0 = w_old
    if params.guess_jitter > 0:
        w0 = w_old + params.guess_jitter * rng.standard_normal(w_old.shape)
    etas = (0.25, 0.5, 0.75, 1.0) if params.continuation_eta else (1.0,)
    y, iters_total, newton_used = w0, 0, False
    for eta in etas:
        prob = _StepProblem(model, grid, u_old, tau, params.reg_enabled, source, eta)
        y, u, res, iters, nu = _inner_solve(prob, y, params)
        iters_total += iters
        newton_used |= nu
    return y, u, res, iters_total, newton_used


def advance(w_old, params: SchemeParams, model: ModelSpec, grid: Grid1D, u_old=None,
            tau: Optional[float] = None, rng=None):
    """Take one accepted implicit step, halving tau on failure.

    Returns ``(w_new, report)``; ``report.state`` holds u(w_new).
    """
    w_old = np.asarray(w_old, dtype=float)
    if u_old is None:
        u_old = invert_gradient(w_old, model)
    if rng is None:
        rng = np.random.default_rng(params.seed)
    tau = float(tau or params.tau)
    old_field = Field(u_old, grid)
    H_old = discrete_entropy(old_field, model)
    mass_old = old_field.masses()
    retries = 0
    last_err = "no attempt"
    while tau >= params.tau_min * (1 - 1e-12):
        try:
            w, u, res, iters, newton_used = _attempt(w_old, u_old, tau, params, model, grid, rng)
        except (InnerSolveError, InversionError, np.linalg.LinAlgError, RuntimeError) as exc:
            last_err = str(exc)
            logger.debug("step with tau=%.3g failed: %s", tau, exc)
        else:
            new_field = Field(u, grid)
            H_new = discrete_entropy(new_field, model)
            mass_drift = new_field.masses() - mass_old
            tol = params.entropy_tol * (1.0 + abs(H_old))
            if model.reaction is not None:
                cf, area = model.reaction.cf, grid.length
                ok_entropy = (1.0 - tau * cf) * H_new <= H_old + tau * cf * area + tol
                ok_mass = True
            else:
                ok_entropy = H_new <= H_old + tol
                ok_mass = params.reg_enabled or bool(
                    np.all(np.abs(mass_drift) <= MASS_TOL * (1.0 + np.abs(mass_old))))
            if ok_entropy and ok_mass:
                Bf = face_B(u, model)
                gw = face_gradient(w, grid)[:, 1:-1]
                quad = float(np.einsum("if,ijf,jf->", gw, Bf, gw) * grid.dx)
                report = StepReport(
                    inner_iterations=iters, final_residual=res, entropy_before=H_old,
                    entropy_after=H_new, dissipation=dissipation_functionals(new_field, model),
                    mass_drift=mass_drift, tau_used=tau, accepted=True,
                    step_dissipation=tau * quad, min_u_last=float(np.min(vacancy(u))),
                    retries=retries, newton_used=newton_used, state=u)
                return w, report
            last_err = (f"audit failed: dH={H_new - H_old:.3e} (tol {tol:.1e}), "
                        f"mass drift {np.max(np.abs(mass_drift)):.3e}")
            logger.debug("step with tau=%.3g rejected: %s", tau, last_err)
        retries += 1
        tau *= 0.5
    raise StepFailure(f"no acceptable step down to tau_min={params.tau_min:.3g}: {last_err}")


def nudge_interior(u, weight: float = BOUNDARY_MIX, margin: float = 1e-12):
    """Mix cells on (or within ``margin`` of) the boundary of D with the barycenter."""
    u = np.array(u, dtype=float, copy=True)
    n = u.shape[0]
    bad = np.any(u <= margin, axis=0) | (vacancy(u) <= margin)
    if np.any(bad):
        u[:, bad] = (1.0 - weight) * u[:, bad] + weight / (n + 1)
    return u


def run_simulation(model: ModelSpec, grid: Grid1D, u0, T: float, params: SchemeParams,
                   output_stride: int = 1,
                   callback: Optional[Callable[[float, np.ndarray, StepReport], None]] = None
                   ) -> Trajectory:
    """Integrate from ``u0`` (Field or (n, N) array) to time ``T``.

    Snapshots are stored at t = 0, every ``output_stride`` accepted steps and
    at ``T``; every step report is kept.
    """
    values = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    Field(values, grid)
    u = nudge_interior(values)
    w = entropy_gradient(u, model, margin=0.0)
    traj = Trajectory(times=[0.0], fields=[u.copy()], grid=grid)
    rng = np.random.default_rng(params.seed)
    t, steps = 0.0, 0
    while t < T * (1 - 1e-12):
        tau = min(params.tau, T - t)
        w, report = advance(w, params, model, grid, u_old=u, tau=tau, rng=rng)
        u = report.state
        report.state = None
        t += report.tau_used
        steps += 1
        traj.reports.append(report)
        traj.step_times.append(t)
        if callback is not None:
            callback(t, u, report)
        if steps % output_stride == 0 or t >= T * (1 - 1e-12):
            traj.times.append(t)
            traj.fields.append(u.copy())
    return traj
