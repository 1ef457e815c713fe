"""Diffusion matrix A(u) and its entropy-weighted forms h''A and A h''^{-1}."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entropy import INTERIOR_MARGIN, _batched, _check_interior, _unbatched, entropy_hessian, vacancy
from .models import ModelConstants, ModelSpec


@dataclass(frozen=True)
class DiffusionMatrices:
    A: np.ndarray
    HA: np.ndarray
    B: np.ndarray


def assemble_A(u, model: ModelSpec):
    """A_ij = delta_ij p_i q + u_i p_i q' + u_i q dp_i/du_j, shape (n, n, ...).

    ``dp_i/du_j = p_i * hess_chi_ij`` and ``q' = q * (q'/q)``, so models
    whose q underflows never produce 0 * inf.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    s = vacancy(u)
    qs = model.qspec
    q = qs.q(s)
    with np.errstate(invalid="ignore"):
        dq = np.where(q > 0, q * qs.dlogq(s), qs.dq(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = model.p(u)
        hess = model.chispec.hess_chi(u)
        dp = p[:, None] * hess
        dp = np.where(np.isfinite(dp), dp, 0.0)
    eye = np.eye(n).reshape((n, n) + (1,) * (u.ndim - 1))
    return eye * (p * q)[:, None] + (u * p * dq)[:, None] + (u * q)[:, None] * dp


def assemble_HA(u, model: ModelSpec, margin: float = INTERIOR_MARGIN):
    u = _check_interior(u, margin)
    H = _batched(entropy_hessian(u, model, margin))
    A = _batched(assemble_A(u, model))
    return _unbatched(H @ A)


def assemble_B(u, model: ModelSpec, margin: float = INTERIOR_MARGIN, symmetrize: bool = False):
    """B = A h''^{-1} by a linear solve against h'' (h'' is symmetric)."""
    u = _check_interior(u, margin)
    H = _batched(entropy_hessian(u, model, margin))
    A = _batched(assemble_A(u, model))
    B = np.swapaxes(np.linalg.solve(H, np.swapaxes(A, -1, -2)), -1, -2)
    if symmetrize:
        B = 0.5 * (B + np.swapaxes(B, -1, -2))
    return _unbatched(B)


def diffusion_matrices(u, model: ModelSpec) -> DiffusionMatrices:
    return DiffusionMatrices(A=assemble_A(u, model), HA=assemble_HA(u, model),
                             B=assemble_B(u, model))


def lower_bound_rhs(u, v, model: ModelSpec, constants: ModelConstants):
    """p0 q(s) sum v_i^2/u_i + p0 delta (q')^2/q (sum v_i)^2 with s = u_{n+1}."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    s = vacancy(u)
    q = model.qspec.q(s)
    phi = model.qspec.dlogq(s)
    return (constants.p0 * q * np.sum(v * v / u, axis=0)
            + constants.p0 * constants.delta * phi * phi * q * np.sum(v, axis=0) ** 2)


def verify_lower_bound(u, v, model: ModelSpec, constants: ModelConstants):
    """Return ``(lhs, rhs, passed)`` for the quadratic-form lower bound of h''A."""
    u = _check_interior(u)
    v = np.asarray(v, dtype=float)
    HA = _batched(assemble_HA(u, model))
    vb = np.moveaxis(v, 0, -1)
    lhs = np.einsum("...i,...ij,...j->...", vb, HA, vb)
    rhs = lower_bound_rhs(u, v, model, constants)
    passed = lhs >= rhs - 1e-9 * (1.0 + np.abs(lhs))
    if np.ndim(lhs) == 0:
        return float(lhs), float(rhs), bool(passed)
    return lhs, rhs, passed
