"""Entropy density, entropy variables and relative entropies.

States are arrays with species on axis 0, shape ``(n, ...)``; trailing axes
are independent points (grid cells, samples) and every routine here is
vectorized over them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from .models import ModelSpec

INTERIOR_MARGIN = 1e-12
TOL_NEWTON = 1e-11
MAX_NEWTON = 50
NEWTON_MARGIN = 1e-14
EPS = np.finfo(float).eps


class BoundaryError(ValueError):
    """A routine that needs a point of the open set D was given a boundary point."""


class InversionError(RuntimeError):
    """Newton inversion of the entropy gradient did not converge."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class StatePoint:
    """A point ``u`` of the closed set D-bar, with the vacancy ``u_{n+1}``."""

    u: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        if np.any(u < 0) or u.sum() > 1 + 1e-15:
            raise ValueError(f"{u} is not in the closed volume-filling set")
        object.__setattr__(self, "u", u)

    @property
    def u_last(self) -> float:
        return float(1.0 - self.u.sum())

    @property
    def interior(self) -> bool:
        return bool(np.all(self.u > 0) and self.u.sum() < 1)

    @property
    def full(self) -> np.ndarray:
        return np.append(self.u, self.u_last)

    def __array__(self, dtype=None, copy=None):
        return self.u if dtype is None else self.u.astype(dtype)


@dataclass(frozen=True)
class RelEntropySplit:
    total: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray


def vacancy(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return 1.0 - u.sum(axis=0)


def _check_interior(u, margin=INTERIOR_MARGIN):
    u = np.asarray(u, dtype=float)
    if np.any(u <= margin) or np.any(vacancy(u) <= margin):
        raise BoundaryError("point(s) on or too close to the boundary of D "
                            f"(margin {margin:g})")
    return u


def entropy_density(u, model: ModelSpec):
    """h(u) = sum(u_i log u_i - u_i + 1) + int_a^{u_{n+1}} log q + chi(u).

    Valid on the closed set; returns ``inf`` where the vacancy integral diverges.
    """
    u = np.asarray(u, dtype=float)
    s = vacancy(u)
    mix = np.sum(xlogy(u, u) - u + 1.0, axis=0)
    return mix + model.qspec.log_integral(np.clip(s, 0.0, 1.0)) + model.chispec.chi(u)


def entropy_gradient(u, model: ModelSpec, margin: float = INTERIOR_MARGIN):
    """Entropy variables w_i = log u_i - log q(u_{n+1}) + d chi / d u_i."""
    u = _check_interior(u, margin)
    return np.log(u) - model.qspec.logq(vacancy(u)) + model.chispec.grad_chi(u)


def entropy_hessian(u, model: ModelSpec, margin: float = INTERIOR_MARGIN):
    """h''(u), shape ``(n, n, ...)``."""
    u = _check_interior(u, margin)
    n = u.shape[0]
    eye = np.eye(n).reshape((n, n) + (1,) * (u.ndim - 1))
    return eye / u[None] + model.qspec.dlogq(vacancy(u)) + model.chispec.hess_chi(u)


def _batched(mat):
    """(n, n, ...) -> (..., n, n)."""
    return np.moveaxis(mat, (0, 1), (-2, -1))


def _unbatched(mat):
    return np.moveaxis(mat, (-2, -1), (0, 1))


def _newton_solver(model: ModelSpec):
    """Residual, Newton step and round-off floor for h'(exp z) = target."""

    def residual(z, target):
        uu = np.exp(z)
        s = vacancy(uu)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = z - model.qspec.logq(s) + model.chispec.grad_chi(uu) - target
        g[:, ~(s > NEWTON_MARGIN)] = np.inf
        return g

    def step(z, g):
        uu = np.exp(z)
        jac = entropy_hessian(uu, model, margin=0.0) * uu[None, :, :]
        return -np.linalg.solve(_batched(jac), g.T[..., None])[..., 0].T

    def floor(z, target):
        # s = 1 - sum(u) carries an absolute error ~eps, amplified by q'/q
        s = vacancy(np.exp(z))
        with np.errstate(invalid="ignore", over="ignore"):
            cond = (1.0 - s) * np.abs(model.qspec.dlogq(np.clip(s, NEWTON_MARGIN, 1.0)))
        cond = np.where(np.isfinite(cond), cond, 0.0)
        return 8.0 * EPS * (1.0 + np.max(np.abs(z), axis=0) + np.max(np.abs(target), axis=0)
                            + cond)

    return residual, step, floor


def _damped_newton(z, target, model, tol, max_iter):
    """Newton in z = log u with backtracking on the max-norm residual.

    Works on copies; returns ``(z, g, res, tol_eff)`` where ``tol_eff``
    includes the round-off floor.
    """
    residual, newton_step, floor = _newton_solver(model)
    z = z.copy()
    g = residual(z, target)
    res = np.max(np.abs(g), axis=0)
    for _ in range(max_iter):
        active = res > tol + floor(z, target)
        if not np.any(active):
            break
        tol_a = tol[active] if np.ndim(tol) else tol
        za, wa, res_a = z[:, active], target[:, active], res[active]
        step = newton_step(za, g[:, active])
        lam = np.ones(za.shape[1])
        new_z = za + step
        ga = residual(new_z, wa)
        ra = np.max(np.abs(ga), axis=0)
        pending = ~(ra <= res_a * (1.0 - 1e-4))
        for _ in range(60):
            if not np.any(pending):
                break
            lam[pending] *= 0.5
            trial = za[:, pending] + lam[pending] * step[:, pending]
            gt = residual(trial, wa[:, pending])
            rt = np.max(np.abs(gt), axis=0)
            new_z[:, pending], ga[:, pending], ra[pending] = trial, gt, rt
            idx = np.flatnonzero(pending)
            pending[idx[rt <= res_a[idx] * (1.0 - 1e-4 * lam[idx])]] = False
        if np.any(pending):
            # no admissible decrease: keep the old iterate there
            new_z[:, pending] = za[:, pending]
            ga[:, pending] = g[:, active][:, pending]
            ra[pending] = res_a[pending]
        z[:, active], g[:, active], res[active] = new_z, ga, ra
        if np.all(pending | (ra <= tol_a)):
            break
    return z, g, res, tol + floor(z, target)


def _extended_newton(z, target, model, tol, max_iter):
    """Newton in y = (log u, log s) with the constraint logsumexp(y) = 0.

    Here the vacancy is an unknown, not 1 - sum(u), so the residual is finite
    for every y <= 0 and no barrier at full packing blocks iterates sliding
    along the boundary.  Acceptance uses the residual and floor of
    :func:`_newton_solver`.
    """
    n = z.shape[0]
    qs, cs = model.qspec, model.chispec
    eye = np.eye(n)[:, :, None]

    def ext_residual(y, w):
        u, s = np.exp(y[:n]), np.exp(y[n])
        g = np.empty_like(y)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            g[:n] = y[:n] - qs.logq(s) + cs.grad_chi(u) - w
        g[n] = logsumexp(y, axis=0)
        g[:, ~(np.all(y <= 0, axis=0) & np.all(np.isfinite(g), axis=0))] = np.inf
        return g

    def ext_step(y, g):
        u, s = np.exp(y[:n]), np.exp(y[n])
        jac = np.empty((n + 1, n + 1, y.shape[1]))
        jac[:n, :n] = eye + cs.hess_chi(u) * u[None]
        jac[:n, n] = -qs.dlogq(s) * s
        jac[n] = softmax(y, axis=0)
        return -np.linalg.solve(_batched(jac), g.T[..., None])[..., 0].T

    residual, _, floor = _newton_solver(model)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.vstack([z, np.log(vacancy(np.exp(z)))])
    y[n, ~np.isfinite(y[n])] = np.log(NEWTON_MARGIN)
    g = ext_residual(y, target)
    res = np.max(np.abs(g), axis=0)
    for _ in range(max_iter):
        ext_floor = 8.0 * EPS * (1.0 + np.max(np.abs(y), axis=0)
                                 + np.max(np.abs(target), axis=0))
        active = res > ext_floor
        if not np.any(active):
            break
        ya, wa, res_a = y[:, active], target[:, active], res[active]
        step = ext_step(ya, g[:, active])
        lam = np.ones(ya.shape[1])
        new_y = ya + step
        ga = ext_residual(new_y, wa)
        ra = np.max(np.abs(ga), axis=0)
        pending = ~(ra <= res_a * (1.0 - 1e-4))
        for _ in range(60):
            if not np.any(pending):
                break
            lam[pending] *= 0.5
            trial = ya[:, pending] + lam[pending] * step[:, pending]
            gt = ext_residual(trial, wa[:, pending])
            rt = np.max(np.abs(gt), axis=0)
            new_y[:, pending], ga[:, pending], ra[pending] = trial, gt, rt
            idx = np.flatnonzero(pending)
            pending[idx[rt <= res_a[idx] * (1.0 - 1e-4 * lam[idx])]] = False
        new_y[:, pending], ga[:, pending], ra[pending] = (
            ya[:, pending], g[:, active][:, pending], res_a[pending])
        y[:, active], g[:, active], res[active] = new_y, ga, ra
        if np.all(pending):
            break
    z = y[:n].copy()
    g = residual(z, target)
    return z, g, np.max(np.abs(g), axis=0), tol + floor(z, target)


def _continuation(z0, target, model, tol, max_iter, min_dt=2.0 ** -20):
    """Follow w(t) = h'(exp z0) + t (target - h'(exp z0)) from t = 0 to 1.

    Every point carries its own t and increment: a stage that converges
    doubles the increment, one that fails halves it.  Intermediate stages
    are solved loosely, the last one to ``tol``.
    """
    residual, _, _ = _newton_solver(model)
    w0 = residual(z0, np.zeros_like(target))
    m = target.shape[1]
    z = z0.copy()
    g = np.full(target.shape, np.inf)
    res = np.full(m, np.inf)
    tol_eff = np.broadcast_to(tol, (m,)).astype(float)
    t = np.zeros(m)
    dt = np.full(m, 0.25)
    live = np.ones(m, dtype=bool)
    while np.any(live):
        idx = np.flatnonzero(live)
        t_next = np.minimum(t[idx] + dt[idx], 1.0)
        last = t_next >= 1.0
        stage = w0[:, idx] + t_next * (target[:, idx] - w0[:, idx])
        tol_stage = np.where(last, tol_eff[idx], np.maximum(tol_eff[idx], 1e-8))
        zn, gn, rn, tn = _extended_newton(z[:, idx], stage, model, tol_stage, max_iter)
        ok = rn <= tn
        good = idx[ok]
        z[:, good], t[good] = zn[:, ok], t_next[ok]
        dt[good] *= 2.0
        dt[idx[~ok]] *= 0.5
        done = good[last[ok]]
        g[:, done], res[done], tol_eff[done] = gn[:, ok & last], rn[ok & last], tn[ok & last]
        stuck = idx[~ok][dt[idx[~ok]] < min_dt]
        g[:, stuck], res[stuck] = gn[:, ~ok][:, dt[idx[~ok]] < min_dt], rn[~ok][dt[idx[~ok]] < min_dt]
        live[done] = False
        live[stuck] = False
    return z, g, res, tol_eff


def chi_free_guess(w, model: ModelSpec, iterations: int = 64):
    """Exact inverse of h' when chi = 0, used as a cold start for every model.

    Without chi, u_i = (1 - s) softmax(w)_i where the vacancy s solves the
    monotone scalar equation log(1 - s) - log q(s) = logsumexp(w); it is
    bracketed by bisection in log s.  ``w`` has shape (n, m).
    """
    lse = logsumexp(w, axis=0)
    lo = np.full(w.shape[1], np.log(NEWTON_MARGIN))
    hi = np.full(w.shape[1], np.log1p(-NEWTON_MARGIN))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        s = np.exp(mid)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.log1p(-s) - model.qspec.logq(s) - lse
        above = f > 0  # f decreases in s, so the root lies to the right
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    s = np.exp(0.5 * (lo + hi))
    return (1.0 - s) * softmax(w, axis=0)


def invert_gradient(w, model: ModelSpec, guess=None, tol: float = TOL_NEWTON,
                    max_iter: int = MAX_NEWTON, polish: int = 0):
    """Solve h'(u) = w for u in D.

    Damped Newton in the log variables z = log u, so every iterate has
    positive components; step halving keeps the vacancy above a tiny margin
    and forbids growth of the residual.  Points where that stalls (cold
    starts near full packing) are redone by Newton in (log u, log s), where
    the vacancy is a free unknown, and as a last resort by continuation in w.  ``guess`` defaults to :func:`chi_free_guess`, exact when p = 1.  ``tol``
    may be an array over points; it is raised by the round-off level of the
    residual, which matters where |q'/q| is huge near full packing.  After
    convergence, ``polish`` extra full Newton steps are taken wherever they
    do not increase the residual, which drives u to round-off accuracy.
    """
    w = np.asarray(w, dtype=float)
    shape = w.shape
    n = shape[0]
    w = w.reshape(n, -1)
    tol = np.broadcast_to(np.asarray(tol, dtype=float), shape[1:]).reshape(-1).copy()
    if guess is None:
        u = chi_free_guess(w, model)
    else:
        u = np.array(guess, dtype=float, copy=True)
        u = np.broadcast_to(u, shape).reshape(n, -1).copy()
    bad = np.any(~(u > 0), axis=0) | ~(vacancy(u) > NEWTON_MARGIN)
    if np.any(bad):
        u[:, bad] = 0.5 / n
    z0 = np.log(u)
    z, g, res, tol_eff = _damped_newton(z0, w, model, tol, max_iter)
    failed = ~(res <= tol_eff)
    if np.any(failed):
        ze, ge, re, te = _extended_newton(z0[:, failed], w[:, failed], model, tol[failed], max_iter)
        z[:, failed], g[:, failed], res[failed], tol_eff[failed] = ze, ge, re, te
    failed = ~(res <= tol_eff)
    if np.any(failed):
        zc, gc, rc, tc = _continuation(z0[:, failed], w[:, failed], model, tol[failed], max_iter)
        z[:, failed], g[:, failed], res[failed], tol_eff[failed] = zc, gc, rc, tc
    if np.all(res <= tol_eff):
        residual, newton_step, _ = _newton_solver(model)
        for _ in range(polish):
            trial = z + newton_step(z, g)
            gt = residual(trial, w)
            rt = np.max(np.abs(gt), axis=0)
            better = rt <= res
            z[:, better], g[:, better], res[better] = trial[:, better], gt[:, better], rt[better]
    u = np.exp(z).reshape(shape)
    if np.any(~(res <= tol_eff)):
        raise InversionError(
            f"entropy-variable inversion failed: max residual {np.max(res):.3e} "
            f"after {max_iter} Newton iterations", last_iterate=u,
            residual=res.reshape(shape[1:]))
    return u


def relative_entropy(u, uinf, model: ModelSpec) -> RelEntropySplit:
    """Pointwise h*(u | uinf) split into its three nonnegative parts.

    ``uinf`` has shape (n,) (a constant state) and must lie inside D.
    """
    u = np.asarray(u, dtype=float)
    uinf = _check_interior(np.asarray(uinf, dtype=float).reshape(-1), 0.0)
    ui = uinf.reshape((-1,) + (1,) * (u.ndim - 1))
    h1 = np.sum(xlogy(u, u) - xlogy(u, ui) - u + ui, axis=0)
    qs = model.qspec
    s, s_inf = vacancy(u), float(1.0 - uinf.sum())
    # int_{s_inf}^{s} log(q(t)/q(s_inf)) dt
    h2 = (qs.log_integral(np.clip(s, 0.0, 1.0)) - qs.log_integral(np.array(s_inf))
          - (s - s_inf) * qs.logq(np.array(s_inf)))
    cs = model.chispec
    h3 = (cs.chi(u) - cs.chi(uinf) - np.tensordot(cs.grad_chi(uinf), u - ui, axes=1))
    return RelEntropySplit(total=h1 + h2 + h3, h1=h1, h2=h2, h3=h3)
