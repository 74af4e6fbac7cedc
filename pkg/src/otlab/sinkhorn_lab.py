"""Sinkhorn matrix scaling and the contraction theory used to verify it.

Normalization maps act on positive matrices whose target marginals are the
uniform vector 1/n:

    row(A)_i = 1/(n sum_j A_ij)      col(A)_j = 1/(n sum_i A_ij)
    f(A) = A diag(col(A))            g(A) = diag(row(A)) A

One Sinkhorn sweep is g(f(A)). On the scaling vectors (w, q) with
A = diag(w) Q diag(q) the sweep is w -> 1/(n Q (1/(n Q^T w))), and since
pointwise inversion is an isometry of the Hilbert projective metric while Q
contracts it by the Birkhoff factor, each sweep contracts the distance of w to
the fixed point by at least that factor. The solver itself runs entirely in
log space so kernels with e^{-C/lam} down to e^{-200} stay exact.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import logsumexp


class SinkhornError(RuntimeError):
    """Raised when scaling fails to reach tolerance; carries the achieved error."""

    def __init__(self, message: str, eps_star: float):
        super().__init__(message)
        self.eps_star = eps_star


class BoundNotApplicableError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class GibbsKernel:
    """Positive kernel Q = exp(-C/lam - 1) stored with its log."""

    logQ: np.ndarray
    lam: float

    @property
    def Q(self) -> np.ndarray:
        return np.exp(self.logQ)

    @property
    def n(self) -> int:
        return self.logQ.shape[0]


def gibbs_kernel(C: np.ndarray, lam: float) -> GibbsKernel:
    C = np.asarray(C, dtype=float)
    if not lam > 0:
        raise ValueError("lam must be positive")
    return GibbsKernel(logQ=-C / lam - 1.0, lam=lam)


@dataclasses.dataclass(frozen=True)
class ScalingPair:
    """Diagonal scalings stored as logs; A = diag(w) Q diag(q)."""

    logw: np.ndarray
    logq: np.ndarray

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.logw)

    @property
    def q(self) -> np.ndarray:
        return np.exp(self.logq)

    def gauge_fixed(self) -> "ScalingPair":
        # (cw, q/c) scales to the same matrix; pin sum(log w) = 0
        c = self.logw.mean()
        return ScalingPair(logw=self.logw - c, logq=self.logq + c)


def scaling_from_duals(u: np.ndarray, v: np.ndarray, lam: float) -> ScalingPair:
    return ScalingPair(logw=np.asarray(u) / lam, logq=np.asarray(v) / lam)


def dual_lift(pair: ScalingPair, lam: float) -> tuple[np.ndarray, np.ndarray]:
    return lam * pair.logw, lam * pair.logq


def scaled_log_plan(gk: GibbsKernel, pair: ScalingPair) -> np.ndarray:
    return gk.logQ + pair.logw[:, None] + pair.logq[None, :]


# ---------------------------------------------------------------------------
# dense normalization maps


def _checked(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    return A


def row_fn(A: np.ndarray) -> np.ndarray:
    """Row normalizers 1/(n * row sums)."""
    A = _checked(A)
    s = A.sum(axis=1)
    if not (np.isfinite(s).all() and (s > 0).all()):
        raise ValueError("row sums must be positive and finite")
    return 1.0 / (A.shape[0] * s)


def col_fn(A: np.ndarray) -> np.ndarray:
    """Column normalizers 1/(n * column sums)."""
    A = _checked(A)
    s = A.sum(axis=0)
    if not (np.isfinite(s).all() and (s > 0).all()):
        raise ValueError("column sums must be positive and finite")
    return 1.0 / (A.shape[0] * s)


def f_map(A: np.ndarray) -> np.ndarray:
    """Column normalization A diag(col(A)); makes column sums exactly 1/n."""
    return A * col_fn(A)[None, :]


def g_map(A: np.ndarray) -> np.ndarray:
    """Row normalization diag(row(A)) A; makes row sums exactly 1/n."""
    return A * row_fn(A)[:, None]


def marginal_error(A: np.ndarray) -> float:
    """Largest deviation of any row/column sum from 1/n (sup-norm)."""
    A = _checked(A)
    n = A.shape[0]
    return max(
        float(np.abs(A.sum(axis=1) - 1.0 / n).max()),
        float(np.abs(A.sum(axis=0) - 1.0 / n).max()),
    )


def marginal_membership(A: np.ndarray, eps: float) -> tuple[bool, float]:
    """Whether all marginals are within eps of 1/n, plus the achieved error."""
    e = marginal_error(A)
    return e <= eps, e


# ---------------------------------------------------------------------------
# Hilbert projective metric and the Birkhoff contraction factor


def hilbert_metric(w, wp) -> float:
    """log max_ij (w_i wp_j)/(w_j wp_i): the projective distance between
    positive vectors, i.e. the spread of their log ratios."""
    w = np.asarray(w, dtype=float)
    wp = np.asarray(wp, dtype=float)
    if not ((w > 0).all() and (wp > 0).all()):
        raise ValueError("vectors must be strictly positive")
    return hilbert_metric_logs(np.log(w), np.log(wp))


def hilbert_metric_logs(logw: np.ndarray, logwp: np.ndarray) -> float:
    d = np.asarray(logw, dtype=float) - np.asarray(logwp, dtype=float)
    return float(d.max() - d.min())


def log_max_cross_ratio(logQ: np.ndarray) -> float:
    """log of max_{ijkl} Q_ik Q_jl / (Q_jk Q_il), computed in O(n^3).

    For each column pair the inner max over (i, j) splits into two independent
    maxima of the column log-difference, i.e. its spread.
    """
    logQ = _checked(logQ)
    n = logQ.shape[0]
    best = 0.0
    for k in range(n):
        for l in range(k + 1, n):
            dk = logQ[:, k] - logQ[:, l]
            best = max(best, float(dk.max() - dk.min()))
    return best


def max_cross_ratio(Q: np.ndarray) -> float:
    Q = _checked(Q)
    if not (Q > 0).all():
        raise ValueError("matrix must be strictly positive")
    return float(np.exp(log_max_cross_ratio(np.log(Q))))


def contraction_factor_from_log(log_phi: float) -> float:
    # (sqrt(phi)-1)/(sqrt(phi)+1) == tanh(log(phi)/4); immune to phi overflow
    return float(np.tanh(log_phi / 4.0))


def contraction_factor(gk: GibbsKernel) -> float:
    """Birkhoff contraction factor of one half-sweep through the kernel."""
    return contraction_factor_from_log(log_max_cross_ratio(gk.logQ))


# ---------------------------------------------------------------------------
# solver


@dataclasses.dataclass(frozen=True)
class SinkhornResult:
    scaling: ScalingPair
    log_plan: np.ndarray
    plan: np.ndarray
    eps_star: float
    sweeps: int


def _f_update(logQ: np.ndarray, logw: np.ndarray) -> np.ndarray:
    # q <- 1/(n Q^T w)
    n = logQ.shape[0]
    return -(np.log(n) + logsumexp(logQ + logw[:, None], axis=0))


def _g_update(logQ: np.ndarray, logq: np.ndarray) -> np.ndarray:
    # w <- 1/(n Q q)
    n = logQ.shape[0]
    return -(np.log(n) + logsumexp(logQ + logq[None, :], axis=1))


def sinkhorn_solve(gk: GibbsKernel, tol: float = 1e-12, max_sweeps: int = 100_000) -> SinkhornResult:
    """Alternate column/row normalization until every marginal is within tol
    of 1/n. Raises SinkhornError (with the achieved error) if the budget runs
    out — the kernel is strictly positive in exact arithmetic, so that only
    signals an unreachable tolerance, not divergence.
    """
    n = gk.n
    logw = np.zeros(n)
    logq = np.zeros(n)
    eps = np.inf
    for sweep in range(1, max_sweeps + 1):
        logq = _f_update(gk.logQ, logw)
        logw = _g_update(gk.logQ, logq)
        logP = gk.logQ + logw[:, None] + logq[None, :]
        P = np.exp(logP)
        eps = marginal_error(P)
        if eps <= tol:
            pair = ScalingPair(logw=logw, logq=logq).gauge_fixed()
            return SinkhornResult(
                scaling=pair,
                log_plan=scaled_log_plan(gk, pair),
                plan=P,
                eps_star=eps,
                sweeps=sweep,
            )
    raise SinkhornError(f"no convergence to {tol} within {max_sweeps} sweeps (reached {eps})", eps_star=float(eps))


def contraction_history(
    gk: GibbsKernel,
    sweeps: int,
    reference: ScalingPair | None = None,
    start: ScalingPair | None = None,
) -> dict:
    """Hilbert-metric distances of the sweep iterates to the fixed point.

    Entry m of mu_w / mu_q is the distance after m full sweeps from `start`
    (default: unit scalings, i.e. the raw kernel).
    """
    if reference is None:
        reference = sinkhorn_solve(gk).scaling
    logw = np.zeros(gk.n) if start is None else start.logw.copy()
    logq = np.zeros(gk.n) if start is None else start.logq.copy()
    mu_w = [hilbert_metric_logs(logw, reference.logw)]
    mu_q = [hilbert_metric_logs(logq, reference.logq)]
    for _ in range(sweeps):
        logq = _f_update(gk.logQ, logw)
        logw = _g_update(gk.logQ, logq)
        mu_w.append(hilbert_metric_logs(logw, reference.logw))
        mu_q.append(hilbert_metric_logs(logq, reference.logq))
    return {
        "mu_w": np.array(mu_w),
        "mu_q": np.array(mu_q),
        "eta": contraction_factor(gk),
    }


# ---------------------------------------------------------------------------
# one-step displacement and the depth bound


def normalization_mu_shifts(A: np.ndarray) -> tuple[float, float]:
    """Hilbert-metric displacement of the scaling vectors under one f / g.

    f multiplies the column scaling by col(A) and g the row scaling by row(A),
    so the displacements are the log-spreads of those normalizer vectors,
    independent of how A is decomposed.
    """
    lc = np.log(col_fn(A))
    lr = np.log(row_fn(A))
    return float(lc.max() - lc.min()), float(lr.max() - lr.min())


def scaling_convergence_bound(n: int, r: float, lam: float, eta: float, depth: int) -> float:
    """Distance bound 36 n^{3/2} e^{r/lam} sqrt(r) / (sqrt(depth) (1 - eta))
    for the scalings reached by descending `depth` steps and then following
    the contraction; only valid once depth >= 64 n^3 e^{3r/lam} r.
    """
    if not 0 <= eta < 1:
        raise BoundNotApplicableError(f"contraction factor must be in [0, 1), got {eta}")
    needed = 64.0 * n**3 * np.exp(3.0 * r / lam) * r
    if depth < needed:
        raise BoundNotApplicableError(f"depth {depth} below the bound's precondition {needed:.3g}")
    return float(36.0 * n**1.5 * np.exp(r / lam) * np.sqrt(r) / (np.sqrt(depth) * (1.0 - eta)))


# ---------------------------------------------------------------------------
# randomized property harnesses


def random_near_scaled(rng: np.random.Generator, n: int, eps_cap: float) -> tuple[np.ndarray, float]:
    """A positive matrix with all marginals strictly within eps_cap of 1/n.

    A lognormal matrix is scaled to doubly stochastic, then perturbed
    entrywise by a relative factor small enough that the achieved marginal
    error stays below 0.9 * eps_cap while every entry stays positive.
    """
    P = np.exp(rng.normal(size=(n, n)))  # well-conditioned, dense sweeps suffice
    P /= P.sum()
    for _ in range(500):
        P = P * col_fn(P)[None, :]
        P = row_fn(P)[:, None] * P
        if marginal_error(P) <= eps_cap * 1e-6:
            break
    rho = n * eps_cap * rng.uniform(0.05, 0.9)
    A = P * (1.0 + rng.uniform(-rho, rho, size=(n, n)))
    eps_star = marginal_error(A)
    if not eps_star < eps_cap:
        raise AssertionError("perturbation sizing failed to stay inside the ball")
    return A, eps_star


def boundary_member(n: int, eps: float) -> np.ndarray:
    """Uniform plan with one row pushed to marginal error exactly eps."""
    A = np.full((n, n), 1.0 / n**2)
    A[0, :] += eps / n
    return A


def closure_harness(trials: int = 1000, ns: tuple[int, ...] = (2, 3, 5, 8), seed: int = 0) -> dict:
    """Check that one f or g application at most triples the marginal error
    (requires starting error < 1/(3n)). Per-trial child seeds keep trials
    independent of execution order.
    """
    violations = 0
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        n = ns[t % len(ns)]
        A, eps = random_near_scaled(rng, n, 1.0 / (3.0 * n))
        for mapped in (f_map(A), g_map(A)):
            ratio = marginal_error(mapped) / (3.0 * eps)
            worst = max(worst, ratio)
            if ratio > 1.0:
                violations += 1
    return {"trials": trials, "violations": violations, "worst_slack": worst}


def shift_harness(trials: int = 1000, ns: tuple[int, ...] = (2, 3, 5, 8), seed: int = 0) -> dict:
    """Check that one f or g application moves the scalings by at most 4 n eps
    in the Hilbert metric (requires starting error < 1/(4n))."""
    violations = 0
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        n = ns[t % len(ns)]
        A, eps = random_near_scaled(rng, n, 1.0 / (4.0 * n))
        for shift in normalization_mu_shifts(A):
            ratio = shift / (4.0 * n * eps)
            worst = max(worst, ratio)
            if ratio > 1.0:
                violations += 1
    return {"trials": trials, "violations": violations, "worst_slack": worst}
