"""Cross-diffusion model declarations, structural checks and model constants.

A model is the pair ``(q, chi)``: ``q`` is the vacancy mobility acting on the
unoccupied fraction ``u_{n+1}`` and ``chi`` is a convex potential whose
gradient gives the departure rates ``p_i = exp(d chi / d u_i)``.  Together
they fix the diffusion matrix and the entropy density.

All callables are vectorized.  Species live on the leading axis: a state is
an array of shape ``(n, ...)``; ``chi`` returns shape ``(...)``,
``grad_chi`` shape ``(n, ...)`` and ``hess_chi`` shape ``(n, n, ...)``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.stats import qmc

logger = logging.getLogger(__name__)

ScalarFn = Callable[[np.ndarray], np.ndarray]

TOL_PSD = 1e-10
BOUNDARY_OFFSET = 1e-6
FD_STEP = 1e-6
DEFAULT_SAMPLES = 10_000


class HypothesisError(ValueError):
    """A model violates one of the structural hypotheses on ``q`` or ``p``."""


def _central_difference(f: ScalarFn, step: float = FD_STEP) -> ScalarFn:
    def df(s):
        s = np.asarray(s, dtype=float)
        lo = np.clip(s - step, 0.0, 1.0)
        hi = np.clip(s + step, 0.0, 1.0)
        return (f(hi) - f(lo)) / (hi - lo)

    return df


@dataclass(frozen=True)
class QSpec:
    """Vacancy mobility ``q`` on [0, 1] with its first two derivatives.

    ``log_q`` and ``dlog_q`` (= q'/q) default to the naive expressions; catalog
    entries supply them analytically so that models whose ``q`` underflows near
    0 (``exp(-s^-alpha)``) stay finite.  ``log_q_primitive`` is an antiderivative
    of ``log q``; without it entropy integrals fall back to adaptive quadrature.
    """

    q: ScalarFn
    dq: ScalarFn
    d2q: ScalarFn
    gamma: float
    name: str = "q"
    nondegenerate: bool = False
    log_q: Optional[ScalarFn] = None
    dlog_q: Optional[ScalarFn] = None
    log_q_primitive: Optional[ScalarFn] = None
    q0: float = field(init=False)
    q1: float = field(init=False)
    a: float = field(init=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise HypothesisError(f"{self.name}: gamma must be positive, got {self.gamma}")
        s = np.linspace(0.0, 1.0, 4001)
        with np.errstate(all="ignore"):
            qs = np.asarray(self.q(s), dtype=float)
            dqs = np.asarray(self.dq(s), dtype=float)
        object.__setattr__(self, "q0", float(np.nanmin(qs)))
        object.__setattr__(self, "q1", float(np.nanmin(dqs)))
        q_one = float(self.q(np.array(1.0)))
        if q_one <= 1.0:
            a = 1.0
        else:
            a = optimize.brentq(lambda t: float(self.q(np.array(t))) - 1.0, 0.0, 1.0, xtol=1e-15)
        object.__setattr__(self, "a", float(a))

    def logq(self, s):
        s = np.asarray(s, dtype=float)
        if self.log_q is not None:
            return self.log_q(s)
        with np.errstate(divide="ignore"):
            return np.log(self.q(s))

    def dlogq(self, s):
        """q'(s)/q(s)."""
        s = np.asarray(s, dtype=float)
        if self.dlog_q is not None:
            return self.dlog_q(s)
        return self.dq(s) / self.q(s)

    def log_integral(self, b):
        """``int_a^b log q(s) ds``; ``+inf`` where the integral diverges at b = 0."""
        b = np.asarray(b, dtype=float)
        if self.log_q_primitive is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self.log_q_primitive(b) - self.log_q_primitive(np.array(self.a))
        out = np.empty(b.shape)
        flat = out.reshape(-1)
        for k, bk in enumerate(b.reshape(-1)):
            flat[k] = self._quad_log(float(bk))
        return out

    def _quad_log(self, b: float) -> float:
        logq = lambda s: float(self.logq(np.array(s)))
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.quad(logq, self.a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
            except (integrate.IntegrationWarning, ZeroDivisionError, OverflowError):
                return math.inf
        return val if math.isfinite(val) else math.inf


@dataclass(frozen=True)
class ChiSpec:
    chi: Callable[[np.ndarray], np.ndarray]
    grad_chi: Callable[[np.ndarray], np.ndarray]
    hess_chi: Callable[[np.ndarray], np.ndarray]
    name: str = "chi"

    def p(self, u):
        """Departure rates p_i(u) = exp(d chi / d u_i)."""
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(self.grad_chi(np.asarray(u, dtype=float)))


@dataclass(frozen=True)
class ReactionSpec:
    """Lotka-Volterra reactions ``f_i(u) = u_i (1 - sum_j s_ij u_j)``."""

    s: np.ndarray
    cf: float

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.s, dtype=float))
        if s.shape[0] != s.shape[1]:
            raise HypothesisError(f"reaction matrix must be square, got {s.shape}")
        if np.any(s < 0):
            raise HypothesisError("reaction coefficients s_ij must be nonnegative")
        if not self.cf > 0:
            raise HypothesisError("reaction bound c_f must be positive")
        object.__setattr__(self, "s", s)

    def rate(self, u):
        u = np.asarray(u, dtype=float)
        return u * (1.0 - np.tensordot(self.s, u, axes=1))


@dataclass(frozen=True)
class ModelSpec:
    n: int
    qspec: QSpec
    chispec: ChiSpec
    reaction: Optional[ReactionSpec] = None
    name: str = "model"

    def __post_init__(self):
        if self.n < 1:
            raise HypothesisError(f"species count must be >= 1, got {self.n}")
        if self.reaction is not None and self.reaction.s.shape != (self.n, self.n):
            raise HypothesisError(
                f"reaction matrix shape {self.reaction.s.shape} does not match n={self.n}")

    def p(self, u):
        return self.chispec.p(u)


@dataclass(frozen=True)
class ModelConstants:
    p0: float
    delta: float
    a: float
    c0: float
    q0: float
    q1: float
    gamma: float
    degenerate_p0: bool = False

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("p0", "delta", "a", "c0", "q0", "q1", "gamma", "degenerate_p0")}


@dataclass
class ValidationReport:
    model: str
    checks: dict = field(default_factory=dict)

    def add(self, key: str, passed: bool, detail: str = ""):
        self.checks[key] = (bool(passed), detail)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def lines(self):
        for key, (ok, detail) in self.checks.items():
            yield f"{'PASS' if ok else 'FAIL'}  {key:<22} {detail}"


# ---------------------------------------------------------------------------
# q families

def build_power_q(alpha: float) -> QSpec:
    """``q(s) = s**alpha`` with ``gamma = alpha``; requires ``alpha >= 1``."""
    alpha = float(alpha)
    if alpha < 1:
        raise HypothesisError(f"power-q needs alpha >= 1, got {alpha}")

    def q(s):
        return np.power(s, alpha)

    def dq(s):
        return alpha * np.power(s, alpha - 1.0)

    def d2q(s):
        if alpha == 1.0:
            return np.zeros_like(np.asarray(s, dtype=float))
        with np.errstate(divide="ignore"):
            return alpha * (alpha - 1.0) * np.power(s, alpha - 2.0)

    def log_q(s):
        with np.errstate(divide="ignore"):
            return alpha * np.log(s)

    def dlog_q(s):
        with np.errstate(divide="ignore"):
            return alpha / np.asarray(s, dtype=float)

    def primitive(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            slogs = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)
        return alpha * (slogs - s)

    return QSpec(q, dq, d2q, gamma=alpha, name=f"power-q:{alpha:g}", log_q=log_q,
                 dlog_q=dlog_q, log_q_primitive=primitive)


def build_exp_q(alpha: float, samples: int = 10_000) -> QSpec:
    """``q(s) = exp(s**alpha) - 1`` for ``0 < alpha <= 1``.

    gamma is the sampled minimum of ``f'(s) = alpha s^(alpha-1)`` on (0, 1].
    """
    alpha = float(alpha)
    if not 0 < alpha <= 1:
        raise HypothesisError(f"exp-q needs 0 < alpha <= 1, got {alpha}")
    s = np.linspace(0.0, 1.0, samples + 1)[1:]
    gamma = float(np.min(alpha * s ** (alpha - 1.0)))

    def q(s):
        return np.expm1(np.power(s, alpha))

    def dq(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return alpha * np.power(s, alpha - 1.0) * np.exp(np.power(s, alpha))

    def d2q(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            f1 = alpha * np.power(s, alpha - 1.0)
            f2 = alpha * (alpha - 1.0) * np.power(s, alpha - 2.0)
            return (f2 + f1 * f1) * np.exp(np.power(s, alpha))

    def dlog_q(s):
        s = np.asarray(s, dtype=float)
        sa = np.power(s, alpha)
        return alpha * np.power(s, alpha - 1.0) * np.exp(sa) / np.expm1(sa)

    return QSpec(q, dq, d2q, gamma=gamma, name=f"exp-q:{alpha:g}", dlog_q=dlog_q)


def build_vanishing_q(alpha: float) -> QSpec:
    """``q(s) = exp(-s**-alpha)``: every derivative vanishes at s = 0.

    ``int_0^b |log q|`` diverges for ``alpha >= 1``.
    """
    alpha = float(alpha)
    if not alpha > 0:
        raise HypothesisError(f"vanishing-q needs alpha > 0, got {alpha}")

    def log_q(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return -np.power(s, -alpha)

    def q(s):
        return np.exp(log_q(s))

    def dlog_q(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return alpha * np.power(s, -alpha - 1.0)

    def dq(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(all="ignore"):
            out = dlog_q(s) * q(s)
        return np.where(s > 0, out, 0.0)

    def d2q(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(all="ignore"):
            g = dlog_q(s)
            out = (g * g - (alpha + 1.0) * g / s) * q(s)
        return np.where(s > 0, out, 0.0)

    def primitive(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            if alpha == 1.0:
                return -np.log(s)
            return -np.power(s, 1.0 - alpha) / (1.0 - alpha)

    return QSpec(q, dq, d2q, gamma=alpha, name=f"vanishing-q:{alpha:g}", log_q=log_q,
                 dlog_q=dlog_q, log_q_primitive=primitive)


def build_q(q: ScalarFn, gamma: float, dq: Optional[ScalarFn] = None,
            d2q: Optional[ScalarFn] = None, name: str = "user-q",
            nondegenerate: bool = False) -> QSpec:
    """Wrap a user-supplied ``q``; missing derivatives use central differences."""
    dq = dq if dq is not None else _central_difference(q)
    d2q = d2q if d2q is not None else _central_difference(dq)
    return QSpec(q, dq, d2q, gamma=gamma, name=name, nondegenerate=nondegenerate)


# ---------------------------------------------------------------------------
# chi families

def _log_primitive(f: ScalarFn) -> ScalarFn:
    def prim(s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        flat = out.reshape(-1)
        for k, sk in enumerate(s.reshape(-1)):
            flat[k] = integrate.quad(lambda t: math.log(float(f(np.array(t)))), 0.0, sk,
                                     epsabs=1e-14, epsrel=1e-13)[0]
        return out

    return prim


def build_chi_per_species(ptilde: Sequence[ScalarFn],
                          dptilde: Optional[Sequence[Optional[ScalarFn]]] = None,
                          primitives: Optional[Sequence[Optional[ScalarFn]]] = None,
                          samples: int = 1001) -> ChiSpec:
    """chi(u) = sum_j chi_j(u_j) with chi_j(s) = int_0^s log ptilde_j + k.

    ``primitives[j]``, when given, must be an antiderivative of ``log ptilde_j``
    vanishing at 0.  ``k`` is the smallest nonnegative shift making chi >= 0.
    """
    n = len(ptilde)
    dptilde = list(dptilde) if dptilde is not None else [None] * n
    primitives = list(primitives) if primitives is not None else [None] * n
    s = np.linspace(0.0, 1.0, samples)
    derivs, prims = [], []
    for j, pj in enumerate(ptilde):
        vals = np.asarray(pj(s), dtype=float) * np.ones_like(s)
        if np.any(~(vals > 0)):
            raise HypothesisError(f"ptilde_{j + 1} must be strictly positive on [0, 1]")
        derivs.append(dptilde[j] if dptilde[j] is not None else _central_difference(pj))
        prims.append(primitives[j] if primitives[j] is not None else _log_primitive(pj))
    k = 0.0
    for prim in prims:
        k = max(k, -float(np.min(prim(s))))

    def chi(u):
        u = np.asarray(u, dtype=float)
        return sum(prims[j](u[j]) for j in range(n)) + n * k

    def grad_chi(u):
        u = np.asarray(u, dtype=float)
        return np.stack([np.log(np.asarray(ptilde[j](u[j]), dtype=float) * np.ones(u.shape[1:]))
                         for j in range(n)])

    def hess_chi(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros((n, n) + u.shape[1:])
        for j in range(n):
            out[j, j] = derivs[j](u[j]) / ptilde[j](u[j])
        return out

    return ChiSpec(chi, grad_chi, hess_chi, name="per-species")


def build_chi_total_density(a_coeffs: Sequence[float]) -> ChiSpec:
    """chi(u) = sigma (log sigma - 1) + 1 with sigma = sum_j a_j u_j.

    Then ``p_i(u) = sigma**a_i``.  The shift 1 makes chi >= 0 whenever
    sigma <= 1 and is irrelevant to every derivative.
    """
    a = np.asarray(a_coeffs, dtype=float)
    if np.any(a < 0) or not np.any(a > 0):
        raise HypothesisError("total-density coefficients must be >= 0 and not all zero")
    n = a.size

    def sigma(u):
        return np.tensordot(a, np.asarray(u, dtype=float), axes=1)

    def chi(u):
        sg = sigma(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            slog = np.where(sg > 0, sg * np.log(np.where(sg > 0, sg, 1.0)), 0.0)
        return slog - sg + 1.0

    def grad_chi(u):
        sg = sigma(u)
        with np.errstate(divide="ignore"):
            ls = np.log(sg)
        return a.reshape((n,) + (1,) * np.ndim(sg)) * ls

    def hess_chi(u):
        sg = sigma(u)
        outer = np.multiply.outer(a, a).reshape((n, n) + (1,) * np.ndim(sg))
        with np.errstate(divide="ignore"):
            return outer / sg

    return ChiSpec(chi, grad_chi, hess_chi, name="total-density")


# ---------------------------------------------------------------------------
# sampling helpers

def sample_interior(n: int, count: int, seed: int = 0, margin: float = 0.0) -> np.ndarray:
    """Quasi-random points of D as an array of shape (n, count).

    Halton points are pushed through the exponential map to a uniform
    distribution on the simplex; ``margin`` keeps every coordinate,
    including ``u_{n+1}``, at least that far from 0.
    """
    pts = qmc.Halton(d=n + 1, scramble=True, seed=seed).random(count)
    e = -np.log(np.clip(pts, 1e-300, None))
    bary = e / e.sum(axis=1, keepdims=True)
    bary = margin + (1.0 - (n + 1) * margin) * bary
    return bary[:, :n].T.copy()


def sample_near_boundary(n: int, offset: float = BOUNDARY_OFFSET) -> np.ndarray:
    """Points of D at distance ``offset`` from each face and near each vertex.

    Works in barycentric coordinates (u_1, ..., u_n, u_{n+1}): one coordinate
    is pinned to ``offset`` (face) or ``1 - n*offset`` (vertex) and the rest
    share the remaining mass evenly.
    """
    pts = []
    for k in range(n + 1):
        for pinned in (offset, 1.0 - n * offset):
            bary = np.full(n + 1, (1.0 - pinned) / n)
            bary[k] = pinned
            pts.append(bary)
    return np.array(pts)[:, :n].T.copy()


def _closure_points(n: int) -> np.ndarray:
    """Vertices and edge midpoints of the closed set D-bar."""
    verts = [np.zeros(n)] + [np.eye(n)[i] for i in range(n)]
    pts = list(verts)
    for i in range(len(verts)):
        for j in range(i + 1, len(verts)):
            pts.append(0.5 * (verts[i] + verts[j]))
    return np.array(pts).T


# ---------------------------------------------------------------------------
# validation and constants

def validate_hypotheses(model: ModelSpec, samples: int = DEFAULT_SAMPLES,
                        seed: int = 0) -> ValidationReport:
    """Check the structural hypotheses pointwise on sampled points; never raises."""
    report = ValidationReport(model.name)
    qs = model.qspec
    s = np.concatenate([qmc.Halton(d=1, scramble=True, seed=seed).random(samples)[:, 0],
                        [BOUNDARY_OFFSET, 1.0 - BOUNDARY_OFFSET]])
    with np.errstate(all="ignore"):
        q_s = qs.q(s)
        dlog = qs.dlogq(s)
        q_zero = float(qs.q(np.array(0.0)))
    if qs.nondegenerate:
        report.add("q(0)=0", True, f"nondegenerate model, q(0)={q_zero:.3g}")
    else:
        report.add("q(0)=0", abs(q_zero) <= 1e-14, f"q(0)={q_zero:.3g}")
    report.add("q>0", bool(np.all(q_s > 0) or np.all(qs.logq(s) > -np.inf)),
               f"min q={np.min(q_s):.3g}")
    # q' >= gamma q  <=>  q'/q >= gamma (q > 0); stable when q underflows
    slack = float(np.min(dlog - qs.gamma))
    report.add("dq>=gamma*q", slack >= -1e-12, f"min(q'/q - gamma)={slack:.3g}")

    u = np.concatenate([sample_interior(model.n, samples, seed=seed),
                        sample_near_boundary(model.n)], axis=1)
    cs = model.chispec
    with np.errstate(all="ignore"):
        chi = cs.chi(u)
        hess = cs.hess_chi(u)
        grad = cs.grad_chi(u)
    report.add("chi>=0", bool(np.all(chi >= -1e-14)), f"min chi={np.min(chi):.3g}")
    hm = np.moveaxis(hess, (0, 1), (-2, -1))
    sym = float(np.max(np.abs(hm - np.swapaxes(hm, -1, -2))))
    eig = np.linalg.eigvalsh(0.5 * (hm + np.swapaxes(hm, -1, -2)))
    min_eig = float(np.min(eig))
    report.add("hess_chi PSD", min_eig >= -TOL_PSD and sym <= 1e-12,
               f"min eig={min_eig:.3g}, asym={sym:.2g}")
    p = cs.p(u)
    finite = bool(np.all(np.isfinite(p)) and np.all(p > 0))
    consistent = bool(np.allclose(np.log(p), grad, rtol=1e-12, atol=1e-12))
    report.add("p=exp(grad chi)", finite and consistent, "finite, positive and consistent"
               if finite and consistent else "non-finite or inconsistent p")
    return report


def compute_constants(model: ModelSpec, samples: int = DEFAULT_SAMPLES,
                      seed: int = 0) -> ModelConstants:
    qs = model.qspec
    u = np.concatenate([sample_interior(model.n, samples, seed=seed),
                        sample_near_boundary(model.n), _closure_points(model.n)], axis=1)
    with np.errstate(all="ignore"):
        p = model.p(u)
    p0 = float(np.nanmin(p))
    degenerate = p0 <= 1e-12
    if degenerate:
        logger.warning("%s: inf p_i = 0 over D; c0 vanishes and rate diagnostics are off",
                       model.name)
        p0 = 0.0
    s = np.concatenate([0.5 + 0.5 * np.linspace(0.0, 1.0, samples + 1)[1:]])
    sup_dq = float(np.max(qs.dq(s)))
    delta = min(0.5, 2.0 * float(qs.q(np.array(0.5))) / sup_dq)
    c0 = 4.0 * p0 * min(1.0, delta)
    return ModelConstants(p0=p0, delta=delta, a=qs.a, c0=c0, q0=qs.q0, q1=qs.q1,
                          gamma=qs.gamma, degenerate_p0=degenerate)


# ---------------------------------------------------------------------------
# catalog

def _one(s):
    return np.ones_like(np.asarray(s, dtype=float))


def _unit_p(n: int) -> ChiSpec:
    """chi = 0, so p_i = 1."""

    def chi(u):
        return np.zeros(np.shape(u)[1:])

    def grad_chi(u):
        return np.zeros(np.shape(u))

    def hess_chi(u):
        return np.zeros((n,) + np.shape(u))

    return ChiSpec(chi, grad_chi, hess_chi, name="unit-p")


def _linear_p(n: int) -> ChiSpec:
    # ptilde(s) = 1 + s, log-primitive (1+s)log(1+s) - s
    prim = lambda s: (1.0 + np.asarray(s)) * np.log1p(s) - np.asarray(s)
    return build_chi_per_species([lambda s: 1.0 + np.asarray(s, dtype=float)] * n,
                                 [_one] * n, [prim] * n)


CATALOG_NAMES = ("ion-transport", "power-q:<alpha>", "skt-volume", "exp-q:<alpha>",
                 "vanishing-q:<alpha>")


def get_model(name: str, n: int = 2, reaction: Optional[ReactionSpec] = None) -> ModelSpec:
    """Resolve a catalog name such as ``"power-q:2"`` into a ModelSpec.

    ``ion-transport``     p = 1, q(s) = s
    ``power-q:alpha``     p_i = 1 + u_i, q(s) = s^alpha
    ``skt-volume``        p_i = u_1 + ... + u_n, q(s) = s
    ``exp-q:alpha``       p = 1, q(s) = exp(s^alpha) - 1
    ``vanishing-q:alpha`` p = 1, q(s) = exp(-s^-alpha)
    """
    key, _, arg = name.partition(":")
    try:
        alpha = float(arg) if arg else None
    except ValueError:
        raise HypothesisError(f"bad parameter in model name {name!r}") from None
    if key == "ion-transport":
        qspec, chispec = build_power_q(1.0), _unit_p(n)
    elif key == "skt-volume":
        qspec, chispec = build_power_q(1.0), build_chi_total_density(np.ones(n))
    elif key in ("power-q", "exp-q", "vanishing-q"):
        if alpha is None:
            raise HypothesisError(f"model {key!r} needs a parameter, e.g. {key}:2")
        if key == "power-q":
            qspec, chispec = build_power_q(alpha), _linear_p(n)
        elif key == "exp-q":
            qspec, chispec = build_exp_q(alpha), _unit_p(n)
        else:
            qspec, chispec = build_vanishing_q(alpha), _unit_p(n)
    else:
        raise HypothesisError(f"unknown model {name!r}; known: {', '.join(CATALOG_NAMES)}")
    return ModelSpec(n=n, qspec=qspec, chispec=chispec, reaction=reaction, name=name)


def has_unit_p(model: ModelSpec, samples: int = 256) -> bool:
    """True when p_i == 1 on sampled points (the uniqueness regime)."""
    u = sample_interior(model.n, samples, margin=1e-3)
    return bool(np.allclose(model.chispec.grad_chi(u), 0.0, atol=1e-13))
