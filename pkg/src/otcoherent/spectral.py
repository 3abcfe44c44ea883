"""Spectral segmentation of transfer operators built from transport plans.

With ``Q = diag(mu)^-1/2 plan diag(nu)^-1/2`` the coherence quotient

    <L f, g>_nu / (|f|_mu |g|_nu) = u^T Q v / (|u| |v|),   u = mu^1/2 f, v = nu^1/2 g,

is maximised by singular pairs of ``Q``. The top pair is always
``(mu^1/2, nu^1/2)`` with value one; the following pairs, mapped back by
``f_k = mu^-1/2 u_k`` and ``g_k = nu^-1/2 v_k``, are the partition vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import ClusterResult, fuzzy_cmeans
from .errors import ChainMismatchError, DegeneratePlanError, ParameterError, SolverError
from .kernels import TransitionKernel
from .measures import DiscreteMeasure, cost_matrix
from .ot_solvers import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    TransportPlan,
    solve_sinkhorn,
    solve_unbalanced,
)

log = logging.getLogger(__name__)

DENSE_SVD_LIMIT = 2000
LANCZOS_TOL = 1e-10
DEGENERACY_GAP = 1e-10
SERIES_NEWTON_AFTER = 5

__all__ = [
    "ClusterResult",
    "SpectralDecomposition",
    "cluster_coherent_sets",
    "concat_normalized",
    "embed",
    "fuzzy_cmeans",
    "normalized_plan_matrix",
    "reference_weights",
    "segment",
    "segment_series",
    "threshold_partition",
    "truncated_svd",
]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Leading singular triplets of a normalised plan matrix.

    Column ``k`` of ``left_vectors``/``right_vectors`` is ``u_{k+1}``/``v_{k+1}``;
    ``partition_left``/``partition_right`` hold the corresponding ``f``/``g``
    once reference weights are attached.
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    mu_weights: np.ndarray | None = None
    nu_weights: np.ndarray | None = None
    partition_left: np.ndarray | None = None
    partition_right: np.ndarray | None = None
    flags: dict = field(default_factory=dict)
    plans: tuple = ()

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def with_weights(self, mu_weights, nu_weights) -> "SpectralDecomposition":
        mu_w = np.asarray(mu_weights, dtype=np.float64)
        nu_w = np.asarray(nu_weights, dtype=np.float64)
        U, V = _canonical_leading(self.singular_values, self.left_vectors,
                                  self.right_vectors, np.sqrt(mu_w))
        f = U / np.sqrt(mu_w)[:, None]
        g = V / np.sqrt(nu_w)[:, None]
        flags = dict(self.flags)
        cu, cv = _alignment(U[:, 0], mu_w), _alignment(V[:, 0], nu_w)
        flags["leading_alignment_left"] = cu
        flags["leading_alignment_right"] = cv
        return replace(self, left_vectors=U, right_vectors=V, mu_weights=mu_w, nu_weights=nu_w,
                       partition_left=f, partition_right=g, flags=flags)

    def to_dict(self) -> dict:
        d = {
            "singular_values": self.singular_values.tolist(),
            "flags": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v)
                      for k, v in self.flags.items()},
        }
        if self.partition_left is not None:
            d["f"] = self.partition_left.T.tolist()
            d["g"] = self.partition_right.T.tolist()
        return d


def _canonical_leading(s, U, V, ref):
    """Rotate a tied leading block so its first left vector is the projection of ``ref``.

    Any orthogonal mix of singular pairs sharing one value is again a valid
    set of singular pairs; this picks the one containing the constant
    function (up to ``diag(mu)^1/2``) whenever it lies in the block.
    """
    b = int(np.sum(s[0] - s < DEGENERACY_GAP))
    if b < 2:
        return U, V
    a = U[:, :b].T @ ref
    if np.linalg.norm(a) == 0:
        return U, V
    a = a / np.linalg.norm(a)
    e = np.zeros(b)
    e[0] = 1.0
    w = a - e
    if np.linalg.norm(w) < 1e-15:
        return U, V
    w = w / np.linalg.norm(w)
    R = np.eye(b) - 2.0 * np.outer(w, w)  # Householder reflection, R e_1 = a
    U, V = U.copy(), V.copy()
    U[:, :b] = U[:, :b] @ R
    V[:, :b] = V[:, :b] @ R
    return _fix_signs(U, V)


def _alignment(u, weights):
    ref = np.sqrt(weights)
    return float(abs(u @ ref) / (np.linalg.norm(u) * np.linalg.norm(ref)))


def reference_weights(obj) -> tuple[np.ndarray, np.ndarray]:
    """Row/column weights used to normalise a plan or kernel.

    Balanced and exact plans use their input marginals, unbalanced plans
    their own row and column sums, kernels their reference measures.
    """
    if isinstance(obj, TransitionKernel):
        return obj.mu_ref.weights, obj.nu_ref.weights
    if isinstance(obj, TransportPlan):
        if obj.balanced:
            return obj.mu_ref.weights, obj.nu_ref.weights
        return obj.matrix.sum(axis=1), obj.matrix.sum(axis=0)
    raise TypeError(f"expected TransportPlan or TransitionKernel, got {type(obj).__name__}")


def normalized_plan_matrix(obj) -> np.ndarray:
    """``diag(mu)^-1/2 plan diag(nu)^-1/2`` for a plan or kernel."""
    mu_w, nu_w = reference_weights(obj)
    if np.any(mu_w <= 0) or np.any(nu_w <= 0):
        raise DegeneratePlanError("reference marginals must be strictly positive")
    if isinstance(obj, TransitionKernel):
        return np.sqrt(mu_w)[:, None] * obj.matrix * np.sqrt(nu_w)[None, :]
    return obj.matrix / np.sqrt(mu_w)[:, None] / np.sqrt(nu_w)[None, :]


def _fix_signs(U, V):
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s, V * s


def _lanczos_svd(A, K, rng, tol=LANCZOS_TOL):
    """Golub-Kahan-Lanczos bidiagonalisation with full reorthogonalisation."""
    m, n = A.shape
    kmax = min(m, n)
    scale = max(np.linalg.norm(A, 1), np.finfo(float).tiny)
    U = np.zeros((m, kmax))
    V = np.zeros((n, kmax + 1))
    alpha = np.zeros(kmax)
    beta = np.zeros(kmax)
    v = rng.standard_normal(n)
    V[:, 0] = v / np.linalg.norm(v)
    check_from = min(kmax, 2 * K + 10)
    for k in range(kmax):
        u = A @ V[:, k]
        if k > 0:
            u -= beta[k - 1] * U[:, k - 1]
        for _ in range(2):
            u -= U[:, :k] @ (U[:, :k].T @ u)
        alpha[k] = np.linalg.norm(u)
        if alpha[k] > 1e-14 * scale:
            U[:, k] = u / alpha[k]
        else:
            alpha[k] = 0.0
            U[:, k] = _fresh_direction(U[:, :k], m, rng)
        w = A.T @ U[:, k] - alpha[k] * V[:, k]
        for _ in range(2):
            w -= V[:, : k + 1] @ (V[:, : k + 1].T @ w)
        beta[k] = np.linalg.norm(w)
        if k + 1 < kmax + 1:
            if beta[k] > 1e-14 * scale:
                V[:, k + 1] = w / beta[k]
            else:
                beta[k] = 0.0
                if k + 1 < n:
                    V[:, k + 1] = _fresh_direction(V[:, : k + 1], n, rng)
        steps = k + 1
        if steps >= check_from and (steps % 5 == 0 or steps == kmax):
            B = np.diag(alpha[:steps]) + np.diag(beta[: steps - 1], 1)
            P, s, Qt = np.linalg.svd(B)
            resid = beta[steps - 1] * np.abs(Qt[:K, steps - 1])
            if steps == kmax or np.all(resid[:K] <= tol):
                Uk = U[:, :steps] @ P[:, :K]
                Vk = V[:, :steps] @ Qt[:K].T
                return s[:K], Uk, Vk, steps
    raise SolverError("Lanczos bidiagonalisation failed to converge")


def _fresh_direction(basis, size, rng):
    for _ in range(10):
        w = rng.standard_normal(size)
        for _ in range(2):
            w -= basis @ (basis.T @ w)
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            return w / nrm
    raise SolverError("could not extend Krylov basis")


def truncated_svd(Q, K: int, seed: int = 0, method: str = "auto") -> SpectralDecomposition:
    """Top-``K`` singular triplets of ``Q``, in descending order.

    ``method`` is ``"dense"`` (LAPACK), ``"lanczos"`` or ``"auto"`` (dense up
    to ``min(m, n) = 2000``). Signs are fixed so that the largest-magnitude
    entry of every ``u_k`` is positive; ``seed`` drives the Lanczos start vector.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2:
        raise ParameterError("expected a matrix")
    m, n = Q.shape
    if not 1 <= K <= min(m, n):
        raise ParameterError(f"K={K} out of range 1..{min(m, n)}")
    if method == "auto":
        method = "dense" if min(m, n) <= DENSE_SVD_LIMIT else "lanczos"
    if method == "dense":
        try:
            U, s, Vt = np.linalg.svd(Q, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"dense SVD failed: {exc}") from exc
        s, U, V = s[:K], U[:, :K], Vt[:K].T
        steps = min(m, n)
    elif method == "lanczos":
        s, U, V, steps = _lanczos_svd(Q, K, np.random.default_rng(seed))
    else:
        raise ParameterError(f"unknown SVD method {method!r}")
    U, V = _fix_signs(U, V)
    flags = {"method": method, "krylov_steps": int(steps)}
    if K >= 2:
        flags["degenerate_leading"] = bool(s[0] - s[1] < DEGENERACY_GAP)
        if flags["degenerate_leading"]:
            log.warning("leading singular value is not simple (gap %.3g)", s[0] - s[1])
    return SpectralDecomposition(s, U, V, flags=flags)


def segment(mu: DiscreteMeasure, nu: DiscreteMeasure, c=None, epsilon: float = 1e-2,
            kappa: float | None = None, K: int = 3, seed: int = 0,
            tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
            svd_method: str = "auto") -> SpectralDecomposition:
    """Two-snapshot coherent-set segmentation.

    Balanced entropic plan when ``kappa`` is None, unbalanced otherwise; the
    unbalanced path normalises by the plan's own marginals. ``c`` defaults to
    the squared Euclidean cost.
    """
    if c is None:
        c = cost_matrix(mu, nu)
    if kappa is None:
        plan = solve_sinkhorn(mu, nu, c, epsilon, tol=tol, max_iter=max_iter)
    else:
        plan = solve_unbalanced(mu, nu, c, epsilon, kappa, tol=tol, max_iter=max_iter)
    Q = normalized_plan_matrix(plan)
    dec = truncated_svd(Q, min(K, *Q.shape), seed=seed, method=svd_method)
    dec = replace(dec, plans=(plan,))
    return dec.with_weights(*reference_weights(plan))


def threshold_partition(f) -> np.ndarray:
    """Hard two-set labels: 1 where ``f >= 0``, else 0."""
    return (np.asarray(f) >= 0).astype(np.int64)


def embed(decomp: SpectralDecomposition, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``(f_2..f_K)_i`` and ``(g_2..g_K)_j``."""
    if decomp.partition_left is None:
        raise ParameterError("decomposition has no partition vectors; attach weights first")
    if not 2 <= K <= decomp.rank:
        raise ParameterError(f"K={K} needs 2 <= K <= {decomp.rank} computed triplets")
    return decomp.partition_left[:, 1:K].copy(), decomp.partition_right[:, 1:K].copy()


def _chain_check(a: DiscreteMeasure, b: DiscreteMeasure, what: str, tol: float):
    if a.size != b.size:
        raise ChainMismatchError(f"{what}: {a.size} vs {b.size} atoms")
    if np.abs(a.weights - b.weights).max() > tol:
        raise ChainMismatchError(f"{what}: marginal weights disagree")


def concat_normalized(plans, measures=None, tol: float = 1e-8) -> np.ndarray:
    """Time-ordered product ``Q_0 Q_1 ... Q_{N-1}`` of normalised plan matrices.

    Plan ``t`` must couple ``measures[t]`` to ``measures[t + 1]``; without
    ``measures`` the chain is checked between consecutive plans only.
    """
    plans = list(plans)
    if not plans:
        raise ParameterError("need at least one plan")
    if measures is not None:
        measures = list(measures)
        if len(measures) != len(plans) + 1:
            raise ChainMismatchError(
                f"{len(plans)} plans need {len(plans) + 1} measures, got {len(measures)}")
        for t, p in enumerate(plans):
            _chain_check(p.mu_ref, measures[t], f"plan {t} source", tol)
            _chain_check(p.nu_ref, measures[t + 1], f"plan {t} target", tol)
    for t in range(len(plans) - 1):
        _chain_check(plans[t].nu_ref, plans[t + 1].mu_ref, f"plans {t}->{t + 1}", tol)
    Q = normalized_plan_matrix(plans[0])
    for p in plans[1:]:
        Q = Q @ normalized_plan_matrix(p)
    return Q


def series_operator(measures, epsilon: float, kappa: float | None = None,
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    progress=None, keep_plans: bool = False):
    """Concatenated normalized operator over a series of snapshots.

    The product is accumulated as the plans are solved, so only the current
    plan is held in memory unless ``keep_plans`` is set.

    Returns
    -------
    Q : ndarray
        Product of the per-step normalized plans, in time order.
    mu_w, nu_w : ndarray
        Reference weights of the first and last slice.
    plans : tuple of TransportPlan
        The kept plans (empty unless ``keep_plans``).
    """
    measures = list(measures)
    if len(measures) < 2:
        raise ParameterError("a series needs at least two snapshots")
    for t in range(len(measures) - 1):
        if measures[t].size != measures[t + 1].size and kappa is None:
            raise ChainMismatchError(
                f"snapshots {t} and {t + 1} have {measures[t].size} and {measures[t + 1].size} atoms")
    kept, Q, mu_w, nu_w, psi = [], None, None, None, None
    for t in range(len(measures) - 1):
        a, b = measures[t], measures[t + 1]
        c = cost_matrix(a, b)
        if kappa is None:
            # consecutive problems are close: reuse the last column potential
            # (rows are particle identities) and start Newton early
            warm = psi if psi is not None and psi.shape == (b.size,) else None
            plan = solve_sinkhorn(a, b, c, epsilon, tol=tol, max_iter=max_iter,
                                  newton_after=SERIES_NEWTON_AFTER, init_psi=warm)
            psi = plan.dual_psi
        else:
            plan = solve_unbalanced(a, b, c, epsilon, kappa, tol=tol, max_iter=max_iter)
        Qt = normalized_plan_matrix(plan)
        Q = Qt if Q is None else Q @ Qt
        if t == 0:
            mu_w = reference_weights(plan)[0]
        nu_w = reference_weights(plan)[1]
        if keep_plans:
            kept.append(plan)
        if progress is not None:
            progress(t, plan)
    return Q, mu_w, nu_w, tuple(kept)


def segment_series(measures, epsilon: float, K: int = 3, kappa: float | None = None,
                   seed: int = 0, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   svd_method: str = "auto", progress=None,
                   keep_plans: bool = False) -> SpectralDecomposition:
    """Segmentation of the concatenated operator over a series of snapshots."""
    Q, mu_w, nu_w, kept = series_operator(measures, epsilon, kappa, tol=tol, max_iter=max_iter,
                                          progress=progress, keep_plans=keep_plans)
    dec = truncated_svd(Q, min(K, *Q.shape), seed=seed, method=svd_method)
    return replace(dec, plans=kept).with_weights(mu_w, nu_w)


def cluster_coherent_sets(decomp: SpectralDecomposition, k: int, K: int | None = None,
                          fuzzifier: float = 2.0, seed: int = 0, tol: float = 1e-8,
                          max_iter: int = 300) -> ClusterResult:
    """Fuzzy c-means on the joint embedding of both time slices.

    Clustering the stacked ``(f_2..f_K)`` and ``(g_2..g_K)`` rows in one run
    makes cluster ``j`` denote the same coherent set at both times.
    """
    K = decomp.rank if K is None else K
    left, right = embed(decomp, K)
    X = np.vstack([left, right])
    slices = np.concatenate([np.zeros(len(left), dtype=np.int64),
                             np.ones(len(right), dtype=np.int64)])
    return fuzzy_cmeans(X, k, fuzzifier=fuzzifier, seed=seed, tol=tol,
                        max_iter=max_iter, correspondence=slices)
