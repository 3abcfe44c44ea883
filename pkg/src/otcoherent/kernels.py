"""Transition kernels for transfer operators built from transport plans.

A kernel ``K`` with reference measures ``mu`` (rows) and ``nu`` (columns) is
doubly stochastic in the sense

    sum_i K[i, j] mu_i = 1  for every j,
    sum_j K[i, j] nu_j = 1  for every i,

which makes ``(L f)(j) = sum_i f_i K[i, j] mu_i`` a Markov operator with
operator norm one between ``L2(mu)`` and ``L2(nu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePlanError, InputError, ParameterError, UnsupportedStructureError
from .measures import DiscreteMeasure
from .ot_solvers import TransportPlan, plan_marginals

BLUR_SHAPES = ("gaussian", "ball")


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    matrix: np.ndarray
    mu_ref: DiscreteMeasure
    nu_ref: DiscreteMeasure

    def residuals(self) -> tuple[float, float]:
        """Max deviations from the column (K1) and row (K2) normalisations."""
        k1 = np.abs(self.mu_ref.weights @ self.matrix - 1.0).max()
        k2 = np.abs(self.matrix @ self.nu_ref.weights - 1.0).max()
        return float(k1), float(k2)

    def plan_matrix(self) -> np.ndarray:
        """Coupling ``diag(mu) K diag(nu)`` represented by the kernel."""
        return self.mu_ref.weights[:, None] * self.matrix * self.nu_ref.weights[None, :]


@dataclass(frozen=True)
class BlurSpec:
    shape: str = "gaussian"
    width: float = 1.0
    truncation: float = 1e-4

    def __post_init__(self):
        if self.shape not in BLUR_SHAPES:
            raise ParameterError(f"unknown blur shape {self.shape!r}; expected one of {BLUR_SHAPES}")
        if not self.width > 0:
            raise ParameterError(f"blur width must be positive, got {self.width}")
        if not self.truncation >= 0:
            raise ParameterError("truncation must be nonnegative")

    @classmethod
    def from_epsilon(cls, epsilon: float, shape: str = "gaussian", truncation: float = 1e-4):
        """Blur whose width ``sqrt(eps / 2)`` matches the Gibbs kernel of ``eps``."""
        return cls(shape, math.sqrt(epsilon / 2.0), truncation)


def kernel_from_regularized(plan: TransportPlan) -> TransitionKernel:
    """``K[i, j] = plan[i, j] / (mu_i nu_j)`` for a balanced plan."""
    if not plan.balanced:
        raise InputError("plan is unbalanced; use kernel_from_unbalanced")
    mw, nw = plan.mu_ref.weights, plan.nu_ref.weights
    if np.any(mw <= 0) or np.any(nw <= 0):
        raise DegeneratePlanError("reference marginals must be strictly positive (mask first)")
    K = plan.matrix / mw[:, None] / nw[None, :]
    return TransitionKernel(K, plan.mu_ref, plan.nu_ref)


def kernel_from_unbalanced(plan: TransportPlan) -> TransitionKernel:
    """Kernel normalised by the plan's own marginals, which become its references."""
    mu_t, nu_t = plan_marginals(plan)
    if np.any(mu_t.weights <= 0) or np.any(nu_t.weights <= 0):
        raise DegeneratePlanError("plan has an empty row or column; mask zero atoms before solving")
    K = plan.matrix / mu_t.weights[:, None] / nu_t.weights[None, :]
    return TransitionKernel(K, mu_t, nu_t)


def make_blur(spec: BlurSpec) -> list[tuple[int, float]]:
    """Discrete symmetric blur as ``(offset, weight)`` pairs summing to one."""
    if spec.shape == "ball":
        r = int(math.floor(spec.width))
        return [(k, 1.0 / (2 * r + 1)) for k in range(-r, r + 1)]
    w = spec.width
    # exp(-k^2 / 2w^2) < truncation  <=>  |k| > w * sqrt(2 ln(1/truncation))
    reach = int(math.ceil(w * math.sqrt(2.0 * math.log(1.0 / spec.truncation)))) + 1 \
        if spec.truncation > 0 else int(math.ceil(40 * w))
    ks = np.arange(-reach, reach + 1)
    vals = np.exp(-ks.astype(float) ** 2 / (2.0 * w * w))
    keep = vals >= spec.truncation
    if not keep.any():
        return [(0, 1.0)]
    ks, vals = ks[keep], vals[keep]
    vals = vals / vals.sum()
    return [(int(k), float(v)) for k, v in zip(ks, vals)]


def blur_matrix(blur, size: int) -> np.ndarray:
    """Toeplitz matrix ``S[a, b] = sigma(a - b)`` on the index range ``0..size-1``."""
    S = np.zeros((size, size))
    for k, wgt in blur:
        if abs(k) < size:
            S += wgt * np.eye(size, k=-k)
    return S


def check_sorted_1d(m: DiscreteMeasure, name: str):
    if m.dim != 1:
        raise UnsupportedStructureError(
            f"index-space smoothing needs 1-D supports; {name} lives in R^{m.dim}")
    if np.any(np.diff(m.points[:, 0]) < 0):
        raise UnsupportedStructureError(f"{name} support must be sorted in increasing order")


def smooth_plan_kernel(plan: TransportPlan, blur) -> TransitionKernel:
    """Kernel from a plan blurred in index space along columns, then rows.

    ``blur`` is a :class:`BlurSpec` or an explicit list of ``(offset, weight)``.
    Convolutions are truncated to the index ranges and renormalised by the
    blur mass that stays inside, so every row of the intermediate kernel
    keeps unit mass; the final column normalisation yields the smoothed
    target marginal returned as ``nu_ref``.
    """
    check_sorted_1d(plan.mu_ref, "mu")
    check_sorted_1d(plan.nu_ref, "nu")
    sigma = make_blur(blur) if isinstance(blur, BlurSpec) else list(blur)
    mw = plan.mu_ref.weights
    if np.any(mw <= 0):
        raise DegeneratePlanError("mu must be strictly positive (mask first)")
    m, n = plan.matrix.shape
    S_J = blur_matrix(sigma, n)
    S_I = blur_matrix(sigma, m)
    z_J = S_J.sum(axis=0)  # blur mass landing inside J from column r
    z_I = S_I.sum(axis=1)  # blur mass available around row i
    K1 = (plan.matrix / mw[:, None] / z_J[None, :]) @ S_J.T
    K2 = (S_I @ K1) / z_I[:, None]
    nu_eps = mw @ K2
    assert np.all(nu_eps > 0), "smoothed marginal vanished"
    K = K2 / nu_eps[None, :]
    nu_ref = DiscreteMeasure(plan.nu_ref.points, nu_eps, plan.nu_ref.index_map)
    return TransitionKernel(K, plan.mu_ref, nu_ref)
