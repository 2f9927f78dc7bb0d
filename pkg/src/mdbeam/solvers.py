"""Classical downlink beamforming solvers.

Implements SINR evaluation, the uplink-downlink duality machinery
(coupling data, extended-eigenproblem balanced power allocation, MMSE
beamformers), iterative max-min SINR balancing, QoS-constrained power
minimisation, ZF / RZF baselines and WMMSE sum-rate maximisation.
All computation is 64-bit; every function is a deterministic, pure
function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before converging."""

    def __init__(self, message, last_value=None):
        super().__init__(message)
        self.last_value = last_value


class InfeasibleError(RuntimeError):
    """The requested QoS targets cannot be met."""


@dataclass
class CouplingData:
    """Effective gains and cross-coupling of a normalized beamformer set.

    G[k] = |h_k^H w~_k|^2, Psi[k, j] = |h_k^H w~_j|^2 for j != k (zero
    diagonal), noise[k] = sigma^2.
    """

    G: np.ndarray
    Psi: np.ndarray
    noise: np.ndarray


@dataclass
class BalanceResult:
    W: np.ndarray          # (N, K) downlink beamforming matrix
    C: float               # balanced SINR level, linear
    q: np.ndarray          # uplink power vector
    p: np.ndarray          # downlink power vector
    iterations: int


@dataclass
class SumRateResult:
    W: np.ndarray
    sum_rate: float
    iterations: int
    virtual_uplink_powers: np.ndarray   # q with sum q = ||W||_F^2
    rate_trace: np.ndarray


def downlink_sinr(H, W, noise_power):
    """Per-user downlink SINR gamma_k for beamforming matrix W."""
    A = np.abs(H.conj().T @ W) ** 2          # A[k, j] = |h_k^H w_j|^2
    sig = np.diag(A)
    interf = A.sum(axis=1) - sig
    return sig / (interf + noise_power)


def sum_rate(H, W, noise_power):
    """Sum rate sum_k log2(1 + gamma_k) in bits/s/Hz."""
    return float(np.log2(1.0 + downlink_sinr(H, W, noise_power)).sum())


def mmse_beamformers(H, q, noise_power):
    """Unit-norm MMSE directions w~_k prop (s2 I + sum_j q_j h_j h_j^H)^-1 h_k.

    One shared covariance inverse is reused for every user.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or not np.any(q > 0):
        raise ValueError("uplink powers must be >= 0 and not all zero")
    N = H.shape[0]
    M = noise_power * np.eye(N, dtype=complex) + (H * q) @ H.conj().T
    W = np.linalg.solve(M, H)
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise ArithmeticError("degenerate MMSE direction")
    return W / norms


def coupling_data(H, W_normalized, noise_power):
    """CouplingData of a set of unit-norm beamforming directions."""
    A = np.abs(H.conj().T @ W_normalized) ** 2
    G = np.diag(A).copy()
    Psi = A - np.diag(G)
    K = H.shape[1]
    return CouplingData(G=G, Psi=Psi, noise=np.full(K, float(noise_power)))


def _power_iteration(M, tol=1e-12, max_iter=10000):
    """Dominant eigenpair of a nonnegative matrix by power iteration."""
    n = M.shape[0]
    x = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(max_iter):
        y = M @ x
        lam_new = np.linalg.norm(y)
        if lam_new == 0:
            raise ArithmeticError("matrix annihilated the iterate")
        y /= lam_new
        if abs(lam_new - lam) <= tol * lam_new and np.linalg.norm(y - x) <= 1e-10:
            return lam_new, y
        x, lam = y, lam_new
    raise NonConvergenceError("power iteration did not converge", lam)


def balanced_allocation(coupling, power_budget, direction):
    """Balanced-SINR power allocation from the extended coupling eigenproblem.

    Builds the (K+1) x (K+1) nonnegative matrix
        [[D M, D n], [1^T D M / P, 1^T D n / P]]
    with D = diag(1/G) and M = Psi (downlink) or Psi^T (uplink); the Perron
    root gives the balanced level C = 1/lambda_max and the dominant
    eigenvector (last entry normalized to 1) gives the powers summing to P.
    """
    if direction not in ("uplink", "downlink"):
        raise ValueError("direction must be 'uplink' or 'downlink'")
    G, Psi, noise = coupling.G, coupling.Psi, coupling.noise
    K = G.shape[0]
    M = Psi.T if direction == "uplink" else Psi
    DM = M / G[:, None]
    Dn = noise / G
    ext = np.zeros((K + 1, K + 1))
    ext[:K, :K] = DM
    ext[:K, K] = Dn
    ext[K, :K] = DM.sum(axis=0) / power_budget
    ext[K, K] = Dn.sum() / power_budget
    lam, vec = _power_iteration(ext)
    if vec[K] <= 0:
        raise ArithmeticError("degenerate dominant eigenvector")
    powers = vec[:K] / vec[K]
    return 1.0 / lam, powers


def sinr_balance_solve(sample, tol=1e-6, max_iter=500):
    """Max-min SINR under a total power budget via alternating duality steps.

    Alternates MMSE uplink filters with balanced uplink power reallocation
    until the balanced level C stabilizes, then maps to downlink powers.
    """
    H, s2, P = sample.H, sample.noise_power, sample.power_budget
    K = sample.n_users
    q = np.full(K, P / K)
    C = 0.0
    for it in range(1, max_iter + 1):
        Wt = mmse_beamformers(H, q, s2)
        C_new, q = balanced_allocation(coupling_data(H, Wt, s2), P, "uplink")
        if abs(C_new - C) <= tol * C_new:
            C = C_new
            break
        C = C_new
    else:
        raise NonConvergenceError(
            f"SINR balancing did not converge in {max_iter} iterations", C)
    Wt = mmse_beamformers(H, q, s2)
    C_dl, p = balanced_allocation(coupling_data(H, Wt, s2), P, "downlink")
    return BalanceResult(W=Wt * np.sqrt(p), C=C_dl, q=q, p=p, iterations=it)


def uplink_sinr(H, W_normalized, q, noise_power):
    """Uplink SINRs when w~_k is the receive filter for user k's signal."""
    B = np.abs(W_normalized.conj().T @ H) ** 2   # B[k, j] = |w~_k^H h_j|^2
    sig = np.diag(B)
    interf = (B * q).sum(axis=1) - q * sig
    return q * sig / (interf + noise_power)


def duality_downlink_powers(coupling, sinrs):
    """Downlink powers achieving the given per-user SINRs exactly.

    Solves (I - D Gamma Psi) p = D Gamma noise; raises InfeasibleError when
    the targets are not jointly achievable with positive powers.
    """
    K = coupling.G.shape[0]
    DGam = sinrs / coupling.G
    A = np.eye(K) - DGam[:, None] * coupling.Psi
    try:
        p = np.linalg.solve(A, DGam * coupling.noise)
    except np.linalg.LinAlgError as exc:
        raise InfeasibleError("singular downlink power system") from exc
    # strictly positive p with positive rhs certifies spectral radius < 1
    if np.any(p <= 0):
        raise InfeasibleError("SINR targets infeasible for these directions")
    return p


def convert_q_to_W(sample, q, clip_tiny=0.0):
    """Map a virtual uplink power vector to a downlink beamforming matrix.

    Recovers MMSE directions from q, reads off the uplink SINRs and solves
    the dual downlink power allocation that achieves the same SINRs with
    the same total power.  Returns (W, achieved downlink SINR vector).

    ``clip_tiny``: uplink powers at or below this value are treated as
    switched-off users (zero beam), which arises for sum-rate solutions.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or q.sum() <= 0:
        raise ValueError("q must be nonnegative with positive sum")
    H, s2 = sample.H, sample.noise_power
    active = q > clip_tiny
    if not np.all(active):
        Wa, _ = convert_q_to_W(
            ChannelSample_like(sample, sample.H[:, active]), q[active])
        W = np.zeros_like(sample.H)
        W[:, active] = Wa
        return W, downlink_sinr(H, W, s2)
    Wt = mmse_beamformers(H, q, s2)
    gul = uplink_sinr(H, Wt, q, s2)
    p = duality_downlink_powers(coupling_data(H, Wt, s2), gul)
    W = Wt * np.sqrt(p)
    return W, downlink_sinr(H, W, s2)


def ChannelSample_like(sample, H):
    from .channel import ChannelSample

    return ChannelSample(H=H, noise_power=sample.noise_power,
                         power_budget=sample.power_budget)


def power_min_solve(sample, tol=1e-6, max_iter=2000, power_cap=None):
    """QoS-constrained transmit power minimisation (fixed-point iteration).

    Iterates q_k <- gamma_k / (h_k^H (s2 I + sum_{j!=k} q_j h_j h_j^H)^-1 h_k)
    from q = 0 until the largest relative change drops below tol, then
    recovers downlink powers meeting the targets with equality.
    Returns (W, total transmit power, q).
    """
    if sample.sinr_targets is None:
        raise ValueError("sample carries no SINR targets")
    H, s2 = sample.H, sample.noise_power
    gam = sample.sinr_targets
    K = sample.n_users
    N = sample.n_antennas
    if power_cap is None:
        power_cap = 1e12 * s2
    q = np.zeros(K)
    for it in range(1, max_iter + 1):
        M = s2 * np.eye(N, dtype=complex) + (H * q) @ H.conj().T
        t = np.einsum("nk,nk->k", H.conj(), np.linalg.solve(M, H)).real
        # leave-own-out via Sherman-Morrison: h^H (M - q h h^H)^-1 h
        t_loo = t / (1.0 - q * t)
        q_new = gam / t_loo
        if np.any(q_new > power_cap):
            raise InfeasibleError("fixed-point powers exceeded the cap; "
                                  "targets declared infeasible")
        delta = np.max(np.abs(q_new - q) / np.maximum(q_new, 1e-300))
        q = q_new
        if delta <= tol:
            break
    else:
        raise NonConvergenceError(
            f"power minimisation did not converge in {max_iter} iterations")
    Wt = mmse_beamformers(H, q, s2)
    p = duality_downlink_powers(coupling_data(H, Wt, s2), gam)
    return Wt * np.sqrt(p), float(p.sum()), q


def _zf_directions(H):
    N, K = H.shape
    if K > N:
        raise ValueError("zero-forcing requires K <= N")
    A = H.conj().T                     # rows are h_k^H
    gram = A @ A.conj().T
    if np.linalg.matrix_rank(gram) < K:
        raise ValueError("rank-deficient channel: ZF undefined")
    W = A.conj().T @ np.linalg.inv(gram)    # pseudo-inverse columns
    return W / np.linalg.norm(W, axis=0)


def zf_beamformer(sample, mode="balance"):
    """Zero-forcing beamformer; 'balance' equalizes SINRs at full budget,
    'targets' meets the sample's SINR targets exactly."""
    H, s2 = sample.H, sample.noise_power
    Wt = _zf_directions(H)
    g = np.abs(np.einsum("nk,nk->k", H.conj(), Wt)) ** 2
    if mode == "balance":
        p = (s2 / g) * sample.power_budget / (s2 / g).sum()
    elif mode == "targets":
        if sample.sinr_targets is None:
            raise ValueError("sample carries no SINR targets")
        p = sample.sinr_targets * s2 / g
    else:
        raise ValueError("mode must be 'balance' or 'targets'")
    return Wt * np.sqrt(p)


def rzf_beamformer(sample, alpha=None):
    """Regularized ZF with equal-SINR power loading at full budget."""
    H, s2 = sample.H, sample.noise_power
    K = sample.n_users
    if alpha is None:
        alpha = K * s2 / sample.power_budget
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    A = H.conj().T
    W = A.conj().T @ np.linalg.inv(A @ A.conj().T + alpha * np.eye(K))
    Wt = W / np.linalg.norm(W, axis=0)
    g = np.abs(np.einsum("nk,nk->k", H.conj(), Wt)) ** 2
    p = (s2 / g) * sample.power_budget / (s2 / g).sum()
    return Wt * np.sqrt(p)


def mrt_beamformer(sample):
    """Matched-filter directions with equal per-user power."""
    H = sample.H
    Wt = H / np.linalg.norm(H, axis=0)
    return Wt * np.sqrt(sample.power_budget / sample.n_users)


def wmmse_sum_rate(sample, tol=1e-8, max_iter=5000):
    """Weighted-MMSE sum-rate maximisation under a total power budget.

    Alternates receiver scalars u_k, MSE weights v_k and a regularized
    transmit update whose multiplier mu is bisected to hit the power budget.
    The sum-rate trace is monotone non-decreasing.  Also extracts the
    virtual uplink powers q_k = s2 v_k |u_k|^2 / mu, which reconstruct the
    returned beamformers exactly through convert_q_to_W.
    """
    H, s2, P = sample.H, sample.noise_power, sample.power_budget
    N, K = H.shape
    W = zf_beamformer(sample, "balance") if K <= N else mrt_beamformer(sample)
    trace = [sum_rate(H, W, s2)]
    a = u = v = None
    mu = 0.0
    for it in range(1, max_iter + 1):
        hw = H.conj().T @ W                      # hw[k, j] = h_k^H w_j
        tot = s2 + (np.abs(hw) ** 2).sum(axis=1)
        u = np.diag(hw) / tot
        v = 1.0 / (1.0 - (u.conj() * np.diag(hw)).real)
        a = v * np.abs(u) ** 2
        A = (H * a) @ H.conj().T
        rhs = H * (u * v)
        # mu search on sum_i c_i / (lam_i + mu)^2 = P via the EVD of A:
        # the function is decreasing and convex, so Newton from the left
        # converges monotonically.
        lam, Q = np.linalg.eigh(A)
        lam = np.maximum(lam.real, 0.0)
        c = (np.abs(Q.conj().T @ rhs) ** 2).sum(axis=1)
        if lam[0] > 0 and (c / lam ** 2).sum() <= P:
            mu = 0.0
        else:
            # safeguarded Newton within a shrinking bracket
            lo, hi = 0.0, np.sqrt(c.sum() / P)
            mu = hi
            for _ in range(200):
                d = lam + mu
                f = (c / d ** 2).sum() - P
                if abs(f) <= 1e-14 * P:
                    break
                if f > 0:
                    lo = mu
                else:
                    hi = mu
                step = mu + f / (2.0 * (c / d ** 3).sum())
                mu = step if lo < step < hi else 0.5 * (lo + hi)
        W = Q @ ((Q.conj().T @ rhs) / (lam + mu)[:, None])
        trace.append(sum_rate(H, W, s2))
        if abs(trace[-1] - trace[-2]) <= tol * max(trace[-1], 1e-300):
            break
    else:
        raise NonConvergenceError(
            f"WMMSE did not converge in {max_iter} iterations", trace[-1])
    if mu > 0:
        q = s2 * v * np.abs(u) ** 2 / mu
        q = q * P / q.sum()     # remove rounding drift; sum is P analytically
    else:
        # power constraint slack: fall back to per-beam powers as q
        q = (np.abs(W) ** 2).sum(axis=0)
    return SumRateResult(W=W, sum_rate=trace[-1], iterations=it,
                         virtual_uplink_powers=q, rate_trace=np.array(trace))
