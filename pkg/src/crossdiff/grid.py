"""Uniform 1-D cell-centred grid, no-flux difference operators and discrete functionals.

Face arrays have length ``N + 1``; faces 0 and N are the domain walls and
carry zero flux.  Operators act on the last axis so species stacks work.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .entropy import entropy_density, vacancy
from .models import ModelSpec


@dataclass(frozen=True)
class Grid1D:
    length: float
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"grid needs at least 2 cells, got {self.N}")
        if not self.length > 0:
            raise ValueError(f"grid length must be positive, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.N

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dx


@dataclass
class Field:
    """Volume fractions of n species on a grid, ``values.shape == (n, N)``."""

    values: np.ndarray
    grid: Grid1D

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.N:
            raise ValueError(f"field has {self.values.shape[1]} cells, grid has {self.grid.N}")
        if np.any(self.values < 0) or np.any(vacancy(self.values) < -1e-15):
            raise ValueError("field leaves the closed volume-filling set")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def u_last(self) -> np.ndarray:
        return vacancy(self.values)

    @property
    def full(self) -> np.ndarray:
        """All n + 1 fractions, shape (n + 1, N)."""
        return np.vstack([self.values, self.u_last])

    def masses(self) -> np.ndarray:
        return self.values.sum(axis=-1) * self.grid.dx


def face_gradient(f, grid: Grid1D):
    f = np.asarray(f, dtype=float)
    g = np.zeros(f.shape[:-1] + (f.shape[-1] + 1,))
    g[..., 1:-1] = np.diff(f, axis=-1) / grid.dx
    return g


def cell_divergence(F, grid: Grid1D):
    return np.diff(np.asarray(F, dtype=float), axis=-1) / grid.dx


def face_average(f):
    """Arithmetic mean of neighbouring cells on interior faces; walls copy the edge cell."""
    f = np.asarray(f, dtype=float)
    out = np.empty(f.shape[:-1] + (f.shape[-1] + 1,))
    out[..., 1:-1] = 0.5 * (f[..., 1:] + f[..., :-1])
    out[..., 0] = f[..., 0]
    out[..., -1] = f[..., -1]
    return out


def neumann_laplacian(grid: Grid1D) -> np.ndarray:
    """Dense matrix of divergence-of-gradient; symmetric, kernel = constants."""
    N = grid.N
    L = np.diag(np.full(N - 1, 1.0), -1) + np.diag(np.full(N - 1, 1.0), 1)
    L -= np.diag(np.r_[1.0, np.full(N - 2, 2.0), 1.0])
    return L / grid.dx ** 2


def discrete_entropy(field: Field, model: ModelSpec) -> float:
    return float(np.sum(entropy_density(field.values, model)) * field.grid.dx)


@dataclass(frozen=True)
class DissipationReport:
    grad_sqrt_u_term: float
    grad_sqrt_q_term: float
    entropy: float
    masses: np.ndarray


def dissipation_functionals(field: Field, model: ModelSpec) -> DissipationReport:
    grid = field.grid
    q = model.qspec.q(field.u_last)
    q2_face = face_average(q * q)
    gu = face_gradient(np.sqrt(field.values), grid)
    gq = face_gradient(np.sqrt(q), grid)
    term_u = float(np.sum(q2_face * gu * gu) * grid.dx)
    term_q = float(np.sum(gq * gq) * grid.dx)
    return DissipationReport(term_u, term_q, discrete_entropy(field, model), field.masses())


def fisher_information(f, mu, grid: Grid1D) -> float:
    """sum over faces of |grad sqrt f|^2 times the face-averaged weight, times dx."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or np.any(np.asarray(mu) < 0):
        raise ValueError("Fisher information needs nonnegative f and weights")
    g = face_gradient(np.sqrt(f), grid)
    return float(np.sum(face_average(mu) * g * g) * grid.dx)


def _neumann_poisson(f, grid: Grid1D):
    """Zero-mean solution of -Lap zeta = f with the cell-centred Neumann Laplacian.

    That Laplacian is diagonalized by the type-II DCT, eigenvalues
    -(2/dx sin(pi k / 2N))^2.
    """
    N = grid.N
    fhat = dct(f, type=2, norm="ortho")
    k = np.arange(N)
    lam = (2.0 / grid.dx * np.sin(np.pi * k / (2 * N))) ** 2
    zhat = np.zeros_like(fhat)
    zhat[1:] = fhat[1:] / lam[1:]
    return dct(zhat, type=3, norm="ortho")


def hminus1_seminorm(f, grid: Grid1D, mean_tol: float = 1e-10) -> float:
    f = np.asarray(f, dtype=float)
    mean = float(np.sum(f) * grid.dx)
    if abs(mean) > mean_tol:
        raise ValueError(f"H^-1 seminorm needs zero mean, got integral {mean:.3e}")
    zeta = _neumann_poisson(f, grid)
    g = face_gradient(zeta, grid)
    return float(np.sqrt(np.sum(g * g) * grid.dx))


def xi_eps(s, eps: float):
    t = np.asarray(s, dtype=float) + eps
    return t * (np.log(t) - 1.0) + 1.0


def gajewski_distance(u: Field, v: Field, eps: float) -> float:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    a, b = u.values, v.values
    d = xi_eps(a, eps) + xi_eps(b, eps) - 2.0 * xi_eps(0.5 * (a + b), eps)
    return float(np.sum(d) * u.grid.dx)
