"""Exact, entropic and unbalanced entropic optimal transport between discrete measures.

Regularised plans are parametrised by dual potentials ``phi, psi`` through

    plan[i, j] = exp((phi[i] + psi[j] - c[i, j]) / eps) * mu[i] * nu[j],

and all iterations act on the potentials additively in the log domain, so no
exponential can overflow regardless of how small ``eps`` is.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    InputError,
    MassMismatchError,
    ParameterError,
    ZeroMassError,
)
from .measures import DiscreteMeasure, as_cost_array
from .simplex import transportation_simplex

log = logging.getLogger(__name__)

MASS_TOL = 1e-9
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling between ``mu_ref`` and ``nu_ref`` plus solver metadata.

    ``epsilon == 0`` marks an exact plan (no duals), ``kappa is None`` a
    balanced one.
    """

    matrix: np.ndarray
    mu_ref: DiscreteMeasure
    nu_ref: DiscreteMeasure
    epsilon: float = 0.0
    kappa: float | None = None
    dual_phi: np.ndarray | None = None
    dual_psi: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True
    transport_cost: float = field(default=float("nan"))
    residual: float = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def balanced(self) -> bool:
        return self.kappa is None

    @property
    def exact(self) -> bool:
        return self.epsilon == 0

    def to_dict(self, include_matrix: bool = False) -> dict:
        d = {
            "shape": list(self.matrix.shape),
            "epsilon": self.epsilon,
            "kappa": self.kappa,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "transport_cost": self.transport_cost,
            "total_mass": float(self.matrix.sum()),
            "dual_phi": None if self.dual_phi is None else self.dual_phi.tolist(),
            "dual_psi": None if self.dual_psi is None else self.dual_psi.tolist(),
        }
        if include_matrix:
            d["matrix"] = self.matrix.tolist()
        return d


def _check_cost(mu, nu, c):
    c = as_cost_array(c)
    if c.shape != (mu.size, nu.size):
        raise DimensionMismatchError(
            f"cost matrix has shape {c.shape}, measures have {mu.size} and {nu.size} atoms")
    if not np.all(np.isfinite(c)):
        raise InputError("cost matrix contains non-finite entries")
    return c


def _check_balanced(mu, nu):
    for name, m in (("mu", mu), ("nu", nu)):
        if np.any(m.weights <= 0):
            raise InputError(f"{name} has zero-weight atoms; apply mask_zero_atoms first")
    if abs(mu.total_mass - nu.total_mass) > MASS_TOL:
        raise MassMismatchError(
            f"total masses differ ({mu.total_mass:.12g} vs {nu.total_mass:.12g}); "
            "use the unbalanced solver (kappa) or normalize both measures")


def _check_params(epsilon, tol, max_iter):
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    if int(max_iter) < 1:
        raise ParameterError(f"max_iter must be at least 1, got {max_iter}")


def _lse_rows(M):
    mx = M.max(axis=1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))


def _softmin_rows(g, c, log_nu, eps):
    """Row-wise ``-eps * log sum_j nu_j exp((g_j - c_ij) / eps)``."""
    return -eps * _lse_rows((g[None, :] - c) / eps + log_nu[None, :])


def _softmin_cols(f, c, log_mu, eps):
    return -eps * _lse_rows(((f[:, None] - c) / eps + log_mu[:, None]).T)


def _violation(actual, target):
    """Marginal violation, relative to the target weight where it is below one.

    Never smaller than the absolute violation, and keeps kernels built by
    dividing through the weights accurate to the same tolerance.
    """
    return float(np.max(np.abs(actual - target) / np.minimum(target, 1.0)))


def _plan(f, g, c, log_mu, log_nu, eps):
    return np.exp((f[:, None] + g[None, :] - c) / eps + log_mu[:, None] + log_nu[None, :])


def solve_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, c, max_iter: int = 100_000) -> TransportPlan:
    """Vertex-optimal plan of the transportation linear program."""
    c = _check_cost(mu, nu, c)
    _check_balanced(mu, nu)
    x, _, _, pivots = transportation_simplex(mu.weights, nu.weights, c, max_iter=max_iter)
    return TransportPlan(
        matrix=x, mu_ref=mu, nu_ref=nu, epsilon=0.0, kappa=None,
        iterations=pivots, converged=True, transport_cost=float((c * x).sum()))


def _newton_step(g, f, c, mu, log_mu, log_nu, nu, eps):
    """Newton direction for the semi-dual in ``psi`` (``phi`` eliminated exactly).

    Returns the direction and its inner product with the gradient ``nu - plan^T 1``.
    """
    P = _plan(f, g, c, log_mu, log_nu, eps)
    s = P.sum(axis=0)
    r = nu - s
    H = (np.diag(s) - P.T @ (P / mu[:, None])) / eps
    d = np.zeros_like(g)
    # the constant direction is the gauge freedom: pin psi[0]
    try:
        with warnings.catch_warnings():
            # ill-conditioned directions are vetted by the line search
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            d[1:] = scipy.linalg.solve(H[1:, 1:], r[1:], assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        d[1:] = np.linalg.lstsq(H[1:, 1:], r[1:], rcond=None)[0]
    return d, float(r @ d)


def solve_sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, c, epsilon: float,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   newton_after: int | None = 50, init_psi=None) -> TransportPlan:
    """Entropic OT plan via log-domain Sinkhorn iterations.

    Stops when the max-norm marginal violation is ``<= tol``, measured
    relative to the target weight for atoms lighter than one. When the
    Sinkhorn sweeps contract slowly (small ``epsilon`` relative to the point
    spacing) the solver switches after ``newton_after`` sweeps to Newton steps
    on the semi-dual, which share the Sinkhorn fixed point. Pass
    ``newton_after=None`` for pure Sinkhorn sweeps. ``init_psi`` warm-starts
    the column potential, e.g. from a neighbouring problem in a time series.

    A plan that misses ``tol`` within ``max_iter`` iterations is returned with
    ``converged=False``.
    """
    c = _check_cost(mu, nu, c)
    _check_balanced(mu, nu)
    _check_params(epsilon, tol, max_iter)
    eps = float(epsilon)
    mw, nw = mu.weights, nu.weights
    log_mu, log_nu = np.log(mw), np.log(nw)
    m, n = c.shape

    if init_psi is None:
        g = np.zeros(n)
    else:
        g = np.asarray(init_psi, dtype=np.float64).reshape(-1)
        if g.shape != (n,) or not np.all(np.isfinite(g)):
            raise ParameterError(f"init_psi must be {n} finite values")
    f = _softmin_rows(g, c, log_nu, eps)
    g = _softmin_cols(f, c, log_mu, eps)
    it = 1
    err = np.inf
    newton = False
    while it < max_iter:
        # column marginals are exact after the psi update; the row
        # violation follows from the next phi update without forming the plan
        f_new = _softmin_rows(g, c, log_nu, eps)
        err = float(np.max(np.maximum(mw, 1.0) * np.abs(np.expm1((f - f_new) / eps))))
        if err <= tol:
            break
        if newton_after is not None and it >= newton_after and min(m, n) > 1:
            newton = True
            break
        f = f_new
        g = _softmin_cols(f, c, log_mu, eps)
        it += 1

    if newton:
        f = _softmin_rows(g, c, log_nu, eps)
        err = _violation(_plan(f, g, c, log_mu, log_nu, eps).sum(axis=0), nw)
        obj = float(g @ nw + f @ mw)
        while err > tol and it < max_iter:
            it += 1
            d, slope = _newton_step(g, f, c, mw, log_mu, log_nu, nw, eps)
            accepted = False
            # Armijo search on the concave semi-dual; the slack absorbs
            # rounding in the objective once the gradient is tiny
            slack = 1e-15 * (abs(obj) + 1.0)
            t = 1.0
            while slope > 0 and t > 1e-10:
                g_try = g + t * d
                f_try = _softmin_rows(g_try, c, log_nu, eps)
                obj_try = float(g_try @ nw + f_try @ mw)
                if obj_try >= obj + 1e-4 * t * slope - slack:
                    e_try = _violation(_plan(f_try, g_try, c, log_mu, log_nu, eps).sum(axis=0), nw)
                    accepted = e_try < err or obj_try > obj + slack
                    break
                t *= 0.5
            if accepted:
                g, f, err, obj = g_try, f_try, e_try, obj_try
                continue
            # Newton stalled (rounding floor or poor conditioning): fall back
            # to plain sweeps, which increase the dual objective monotonically
            for _ in range(10):
                g = _softmin_cols(f, c, log_mu, eps)
                f = _softmin_rows(g, c, log_nu, eps)
                it += 1
            err = _violation(_plan(f, g, c, log_mu, log_nu, eps).sum(axis=0), nw)
            obj = float(g @ nw + f @ mw)

    # gauge: sum_i phi_i mu_i = 0
    shift = float(np.dot(f, mw) / mw.sum())
    f = f - shift
    g = g + shift
    P = _plan(f, g, c, log_mu, log_nu, eps)
    converged = err <= tol
    if not converged:
        log.warning("Sinkhorn did not reach tol=%g in %d iterations (residual %g)", tol, it, err)
    return TransportPlan(
        matrix=P, mu_ref=mu, nu_ref=nu, epsilon=eps, kappa=None,
        dual_phi=f, dual_psi=g, iterations=it, converged=converged,
        transport_cost=float((c * P).sum()), residual=err)


def _translate(f, g, log_mu, log_nu, kappa):
    """Optimal dual shift along ``(phi + t, psi - t)``, which leaves the plan unchanged.

    The sweeps damp this direction only by ``eps / (kappa + eps)`` per step,
    hopeless for large ``kappa``; the one-dimensional maximiser is explicit.
    """
    la = _lse_rows((log_mu - f / kappa)[None, :])[0]
    lb = _lse_rows((log_nu - g / kappa)[None, :])[0]
    t = 0.5 * kappa * (la - lb)
    return f + t, g - t


def solve_unbalanced(mu: DiscreteMeasure, nu: DiscreteMeasure, c, epsilon: float, kappa: float,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> TransportPlan:
    """Entropic OT with KL-penalised marginals (strength ``kappa``).

    Each half-step is the balanced soft-min update damped by the exponent
    ``kappa / (kappa + epsilon)``. Convergence is measured by the stationarity
    residual ``max |plan 1 - mu * exp(-phi / kappa)|`` (and its column
    counterpart), which is in mass units and reduces to the marginal violation
    as ``kappa`` grows.
    """
    c = _check_cost(mu, nu, c)
    _check_params(epsilon, tol, max_iter)
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    if not (mu.total_mass > 0 and nu.total_mass > 0):
        raise ZeroMassError("unbalanced transport needs positive total mass on both sides")
    eps, kap = float(epsilon), float(kappa)
    lam = kap / (kap + eps)
    mw, nw = mu.weights, nu.weights
    with np.errstate(divide="ignore"):
        log_mu, log_nu = np.log(mw), np.log(nw)

    g = np.zeros(c.shape[1])
    f = lam * _softmin_rows(g, c, log_nu, eps)
    g = lam * _softmin_cols(f, c, log_mu, eps)
    it = 1
    err = np.inf
    while True:
        f_new = lam * _softmin_rows(g, c, log_nu, eps)
        # current row sums are mu * exp(phi/eps - phi_new / (lam * eps))
        rows = mw * np.exp(f / eps - f_new / (lam * eps))
        err = float(np.max(np.abs(rows - mw * np.exp(-f / kap))))
        if err <= tol or it >= max_iter:
            break
        f = f_new
        g = lam * _softmin_cols(f, c, log_mu, eps)
        f, g = _translate(f, g, log_mu, log_nu, kap)
        it += 1

    P = _plan(f, g, c, log_mu, log_nu, eps)
    converged = err <= tol
    if not converged:
        log.warning("unbalanced Sinkhorn did not reach tol=%g in %d iterations (residual %g)",
                    tol, it, err)
    return TransportPlan(
        matrix=P, mu_ref=mu, nu_ref=nu, epsilon=eps, kappa=kap,
        dual_phi=f, dual_psi=g, iterations=it, converged=converged,
        transport_cost=float((c * P).sum()), residual=err)


def plan_marginals(p: TransportPlan) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Row- and column-sum measures of a plan on the reference supports."""
    return (DiscreteMeasure(p.mu_ref.points, p.matrix.sum(axis=1), p.mu_ref.index_map),
            DiscreteMeasure(p.nu_ref.points, p.matrix.sum(axis=0), p.nu_ref.index_map))


def _as_mass_array(a):
    if isinstance(a, DiscreteMeasure):
        return a.weights
    if isinstance(a, TransportPlan):
        return a.matrix
    return np.asarray(a, dtype=np.float64)


def kl_divergence(a, b) -> float:
    """``sum a log(a/b) + sum b - sum a`` with ``0 log(0/b) = 0``; ``inf`` if ``a`` is not << ``b``."""
    a = _as_mass_array(a)
    b = _as_mass_array(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise InputError("KL divergence needs nonnegative arguments")
    pos = a > 0
    if np.any(b[pos] == 0):
        return float("inf")
    ap, bp = a[pos], b[pos]
    return float(np.sum(ap * np.log(ap / bp)) + b.sum() - a.sum())
