"""Adaptive-stepsize gradient descent on the entropic-OT dual.

For duals (u, v) the smoothed objective is

    L(u, v) = lam * sum_ij M_ij - (1/n) sum_i u_i - (1/n) sum_j v_j,
    M_ij    = exp((-C_ij + u_i + v_j)/lam - 1),

whose partial gradients are the marginal defects of M: grad_u = M 1 - 1/n and
grad_v = M^T 1 - 1/n. The descent preconditions each coordinate by
gamma / (marginal + 1); that "+1" is what a softmax over n points plus one
auxiliary token computes, which is why a fixed attention layer can realize the
step. Everything touching M goes through its log to survive lam as small as
5e-3 (entries underflow to exactly 0.0, which is the correct limit for every
quantity below).
"""

from __future__ import annotations

import dataclasses

import numpy as np


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    # lean logsumexp for the hot per-step paths; inputs are always finite here
    m = a.max(axis=axis, keepdims=True)
    return m.squeeze(axis) + np.log(np.exp(a - m).sum(axis=axis))


@dataclasses.dataclass(frozen=True)
class DualIterate:
    u: np.ndarray
    v: np.ndarray
    step: int = 0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != v.shape or u.ndim != 1:
            raise ValueError("u and v must be 1-D of equal length")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])


def zero_iterate(n: int) -> DualIterate:
    return DualIterate(u=np.zeros(n), v=np.zeros(n), step=0)


@dataclasses.dataclass(frozen=True)
class KernelMatrix:
    """The positive matrix M at a dual iterate, kept with its log."""

    M: np.ndarray
    logM: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return np.exp(_lse(self.logM, axis=1))

    @property
    def col_sums(self) -> np.ndarray:
        return np.exp(_lse(self.logM, axis=0))


def kernel(C: np.ndarray, it: DualIterate, lam: float) -> KernelMatrix:
    logM = (-C + it.u[:, None] + it.v[None, :]) / lam - 1.0
    return KernelMatrix(M=np.exp(logM), logM=logM)


def dual_objective(C: np.ndarray, it: DualIterate, lam: float) -> float:
    n = C.shape[0]
    logM = (-C + it.u[:, None] + it.v[None, :]) / lam - 1.0
    total = np.exp(_lse(logM.ravel(), axis=0))
    return lam * total - (it.u.sum() + it.v.sum()) / n


def gradients(C: np.ndarray, it: DualIterate, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Marginal defects (M 1 - 1/n, M^T 1 - 1/n) of the kernel at the iterate."""
    n = C.shape[0]
    k = kernel(C, it, lam)
    return k.row_sums - 1.0 / n, k.col_sums - 1.0 / n


def marginal_error(k: KernelMatrix) -> float:
    """Largest row/column-sum deviation from 1/n; equals the sup-norm of the gradient."""
    n = k.logM.shape[0]
    return max(
        float(np.abs(k.row_sums - 1.0 / n).max()),
        float(np.abs(k.col_sums - 1.0 / n).max()),
    )


def adaptive_stepsizes(k: KernelMatrix, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal preconditioners gamma/(row_sum + 1) and gamma/(col_sum + 1)."""
    return gamma / (k.row_sums + 1.0), gamma / (k.col_sums + 1.0)


def _step_ratio(log_s: np.ndarray, n: int) -> np.ndarray:
    # (s - 1/n)/(s + 1) from log s; the rewrite for log s > 0 avoids inf/inf
    out = np.empty_like(log_s)
    big = log_s > 0
    e = np.exp(-log_s[big])
    out[big] = (1.0 - e / n) / (1.0 + e)
    s = np.exp(log_s[~big])
    out[~big] = (s - 1.0 / n) / (s + 1.0)
    return out


def gd_step(C: np.ndarray, it: DualIterate, lam: float, gamma: float) -> DualIterate:
    """One preconditioned descent step; both blocks read the same iterate."""
    n = C.shape[0]
    logM = (-C + it.u[:, None] + it.v[None, :]) / lam - 1.0
    u = it.u - gamma * _step_ratio(_lse(logM, axis=1), n)
    v = it.v - gamma * _step_ratio(_lse(logM, axis=0), n)
    return DualIterate(u=u, v=v, step=it.step + 1)


@dataclasses.dataclass(frozen=True)
class StepsizeSchedule:
    """Constant stepsize, either given directly or derived from a radius bound.

    mode "fixed" uses gamma as-is. mode "radius" sets
    gamma = exp(-2 r / lam) / (n + 2), the inverse of the smoothness constant
    on the ball of radius r, which guarantees monotone descent there.
    """

    mode: str
    gamma: float = 0.0
    r: float = 0.0

    @staticmethod
    def fixed(gamma: float) -> "StepsizeSchedule":
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        return StepsizeSchedule(mode="fixed", gamma=gamma)

    @staticmethod
    def from_radius(r: float) -> "StepsizeSchedule":
        if not r >= 0:
            raise ValueError("radius must be nonnegative")
        return StepsizeSchedule(mode="radius", r=r)

    def resolve(self, n: int, lam: float) -> float:
        if self.mode == "fixed":
            return self.gamma
        if self.mode == "radius":
            return 1.0 / smoothness_bound(n, self.r, lam)
        raise ValueError(f"unknown schedule mode {self.mode!r}")


@dataclasses.dataclass
class Trajectory:
    iterates: list[DualIterate]
    grad_u_norms: np.ndarray
    grad_v_norms: np.ndarray
    objectives: np.ndarray
    marginal_errors: np.ndarray
    radius: float  # max_k ||theta_k||_2 actually realized
    gamma: float
    deltas: np.ndarray | None = None  # weighted squared distance to a reference, if given

    @property
    def depth(self) -> int:
        return len(self.iterates) - 1


def gd_run(
    C: np.ndarray,
    lam: float,
    depth: int,
    schedule: StepsizeSchedule,
    reference: tuple[np.ndarray, np.ndarray] | None = None,
) -> Trajectory:
    """Run `depth` steps from zero duals, recording per-step diagnostics.

    If `reference` duals (u*, v*) are given, also records
    Delta_k = ||theta_k - theta*||^2 in the inverse-stepsize metric at step k,
    with theta* re-gauged per step so its u-mean matches the iterate's (the
    objective and kernel are invariant under (u+c, v-c)).
    """
    n = C.shape[0]
    gamma = schedule.resolve(n, lam)
    it = zero_iterate(n)
    iterates = [it]
    gus, gvs, objs, errs, deltas = [], [], [], [], []

    def record(cur: DualIterate):
        logM = (-C + cur.u[:, None] + cur.v[None, :]) / lam - 1.0
        log_rs = _lse(logM, axis=1)
        rs, cs = np.exp(log_rs), np.exp(_lse(logM, axis=0))
        gu, gv = rs - 1.0 / n, cs - 1.0 / n
        gus.append(np.linalg.norm(gu))
        gvs.append(np.linalg.norm(gv))
        objs.append(lam * np.exp(_lse(log_rs, axis=0)) - (cur.u.sum() + cur.v.sum()) / n)
        errs.append(max(np.abs(gu).max(), np.abs(gv).max()))
        if reference is not None:
            c = cur.u.mean() - reference[0].mean()
            du = cur.u - (reference[0] + c)
            dv = cur.v - (reference[1] - c)
            deltas.append((du**2 * (rs + 1.0)).sum() / gamma + (dv**2 * (cs + 1.0)).sum() / gamma)

    record(it)
    for _ in range(depth):
        it = gd_step(C, it, lam, gamma)
        iterates.append(it)
        record(it)

    radius = max(float(np.linalg.norm(i.theta)) for i in iterates)
    return Trajectory(
        iterates=iterates,
        grad_u_norms=np.array(gus),
        grad_v_norms=np.array(gvs),
        objectives=np.array(objs),
        marginal_errors=np.array(errs),
        radius=radius,
        gamma=gamma,
        deltas=np.array(deltas) if reference is not None else None,
    )


def trajectory_to_csv(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,grad_u_norm,grad_v_norm,objective,marginal_error\n")
        for k in range(len(traj.iterates)):
            fh.write(
                f"{k},{float(traj.grad_u_norms[k])!r},{float(traj.grad_v_norms[k])!r},"
                f"{float(traj.objectives[k])!r},{float(traj.marginal_errors[k])!r}\n"
            )


def smoothness_bound(n: int, r: float, lam: float) -> float:
    """Smoothness constant (n+2) e^{2r/lam} for the ball ||theta||_2 <= r.

    Its inverse is the radius-matched stepsize. Kernel entries on the ball are
    at most e^{2r/lam - 1}, so this dominates the Hessian spectral norm
    whenever lam >= 1 (2n/e <= n+2); for smaller lam the Hessian's 1/lam
    factor can exceed it and the matched stepsize loses its descent guarantee.
    """
    return (n + 2) * np.exp(2.0 * r / lam)


def hessian(C: np.ndarray, it: DualIterate, lam: float) -> np.ndarray:
    """Exact dual Hessian (1/lam) [[diag(M1), M], [M^T, diag(M^T 1)]]."""
    k = kernel(C, it, lam)
    n = C.shape[0]
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = np.diag(k.row_sums)
    H[:n, n:] = k.M
    H[n:, :n] = k.M.T
    H[n:, n:] = np.diag(k.col_sums)
    return H / lam


def min_grad_bound(n: int, r: float, lam: float, depth: int) -> float:
    """Bound on min_k ||grad L(theta_k)||^2 over a depth-`depth` run confined
    to radius r with the radius-matched stepsize."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return smoothness_bound(n, r, lam) * (n * np.exp(r / lam) + 1.0) * r / depth


def best_marginal_eps(n: int, r: float, lam: float, depth: int) -> float:
    """eps such that some iterate k <= depth has all marginal defects within
    eps of 1/n: eps^2 = 3 n e^{3r/lam} r / depth."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return float(np.sqrt(3.0 * n * np.exp(3.0 * r / lam) * r / depth))
