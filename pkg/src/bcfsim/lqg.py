"""Control-theoretic linear feedback code driven by an unstable state system.

The transmitter embeds the two message points as the initial state of a
diagonal system with |a| > 1 and, each round, transmits the minimum-energy
stabilizing control of the state it reconstructs from feedback.  Receivers
accumulate their observations against the growing mode and read the message
off the rescaled accumulator.  The module also provides the symmetric-rate
bound of this code family, used to cross-check the spreading code's sum
capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .modulation import demap, make_constellation, map_message
from .solvers import SolverError, bisect_root, golden_section_min

__all__ = [
    "LqgRateSolution",
    "riccati_gain",
    "closed_loop",
    "average_power",
    "asymptotic_power",
    "find_a_two_user",
    "design_stats",
    "find_theta_power",
    "lqg_symmetric_rate",
    "LqgCode",
]


def riccati_gain(A: np.ndarray, b: np.ndarray, *, tol: float = 1e-12,
                 max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-control-energy Riccati solution and feedback row for (A, b).

    Iterates G <- A^T G A - A^T G b (b^T G b + 1)^-1 b^T G A from G = I
    until the relative change falls below ``tol``; requires every diagonal
    mode of A to be strictly unstable so the positive-definite fixed point
    is unique.  Returns (G, c) with c = (b^T G b + 1)^-1 b^T G A.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    n = A.shape[0]
    G = np.eye(n)
    for _ in range(max_iter):
        Gb = G @ b
        gain = (A.T @ Gb) / (b.T @ Gb + 1.0)
        G_next = A.T @ G @ A - gain @ (Gb.T @ A)
        G_next = 0.5 * (G_next + G_next.T)
        delta = np.max(np.abs(G_next - G)) / max(1.0, np.max(np.abs(G_next)))
        G = G_next
        if delta < tol:
            break
    else:
        raise SolverError("Riccati iteration did not converge")
    Gb = G @ b
    c = (b.T @ G @ A) / (b.T @ Gb + 1.0)
    resid = np.linalg.norm(A.T @ G @ A - (A.T @ Gb) @ (Gb.T @ A) / (b.T @ Gb + 1.0) - G)
    if resid > 1e-9 * max(1.0, np.linalg.norm(G)):
        raise SolverError(f"Riccati residual {resid:.3e} exceeds tolerance")
    return G, c.reshape(-1)


def closed_loop(A: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """State matrix under the control x = -c s, namely A - b c."""
    return np.asarray(A, float) - np.outer(np.asarray(b, float), np.asarray(c, float))


def average_power(a: float, P: float, sigma_b2: float, sigma_f2: float, N: int,
                  theta_power: float) -> float:
    """Deterministic average transmit power over N uses at system gain ``a``.

    Propagates the exact second moments of the closed-loop state from the
    message covariance, including feedback noise re-entering through the
    transmitter's state reconstruction.
    """
    A = np.diag([a, -a])
    b = np.ones(2)
    _, c = riccati_gain(A, b)
    M = closed_loop(A, b, c)
    cov = theta_power * np.eye(2)
    drive = (sigma_b2 + sigma_f2) * np.eye(2)
    total = 0.0
    for _ in range(N):
        total += float(c @ cov @ c)
        cov = M @ cov @ M.T + drive
    return total / N


def asymptotic_power(a: float, sigma_b2: float, sigma_f2: float = 0.0) -> float:
    """Steady-state transmit power of the two-user closed loop at gain ``a``."""
    A = np.diag([a, -a])
    b = np.ones(2)
    _, c = riccati_gain(A, b)
    M = closed_loop(A, b, c)
    drive = (sigma_b2 + sigma_f2) * np.eye(2)
    cov = drive.copy()
    for _ in range(200_000):
        nxt = M @ cov @ M.T + drive
        if np.max(np.abs(nxt - cov)) < 1e-14 * max(1.0, np.max(np.abs(nxt))):
            cov = nxt
            break
        cov = nxt
    return float(c @ cov @ c)


def _asymptotic_a_gap(a: float, snr: float) -> float:
    return (a**4 - 1.0) * (a * a + 1.0) / (2.0 * a * a) - snr


def find_a_two_user(P: float, sigma_b2: float, N: int | None = None,
                    sigma_f2: float = 0.0, theta_power: float | None = None) -> float:
    """System gain meeting the average power constraint for two users.

    With ``N=None`` returns the root of (a^4-1)(a^2+1)/(2a^2) = P/sigma_b2,
    the steady-state balance.  For finite N the gain is found by
    golden-section search on |average power - P| computed from the exact
    second-moment recursion (no sampling), then checked to 0.5%.
    """
    snr = P / sigma_b2
    if N is None:
        hi = 2.0
        while _asymptotic_a_gap(hi, snr) < 0.0:
            hi *= 2.0
        return bisect_root(lambda a: _asymptotic_a_gap(a, snr), 1.0 + 1e-12, hi)

    if theta_power is None:
        theta_power = P
    lo = 1.0 + 1e-9
    hi = 1.5
    while average_power(hi, P, sigma_b2, sigma_f2, N, theta_power) < P:
        hi *= 2.0
        if hi > 1e8:
            raise SolverError("failed to bracket the power constraint")
    a = golden_section_min(
        lambda g: abs(average_power(g, P, sigma_b2, sigma_f2, N, theta_power) - P),
        lo, hi)
    gap = abs(average_power(a, P, sigma_b2, sigma_f2, N, theta_power) - P) / P
    if gap > 5e-3:
        raise SolverError(f"power constraint missed by {gap:.2%}")
    return a


def design_stats(a: float, P: float, sigma_b2: float, sigma_f2: float, N: int,
                 theta_power: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact decode-error statistics of the two-user code at gain ``a``.

    Returns (signal_scale, error_variance) per user for the de-biased
    estimate: the residual message transient leaves a known shrinkage of
    the estimate, the other user's message leaks through the off-diagonal
    of the closed-loop power, the channel noise enters through the
    propagated state, and feedback noise adds an irreducible floor.
    """
    A = np.diag([a, -a])
    b = np.ones(2)
    _, c = riccati_gain(A, b)
    M = closed_loop(A, b, c)
    Mn = np.linalg.matrix_power(M, N)
    cov_noise = np.zeros((2, 2))
    for t in range(N):
        Mk = np.linalg.matrix_power(M, N - 1 - t)
        cov_noise += (sigma_b2 + sigma_f2) * (Mk @ Mk.T)
    a_vec = np.array([a, -a])
    scale = a_vec ** (-float(N))
    signal_scale = 1.0 - scale * np.diag(Mn)
    cross = Mn[[0, 1], [1, 0]]
    err_var = (scale ** 2) * (cross ** 2) * theta_power \
        + (scale ** 2) * np.diag(cov_noise)
    if sigma_f2 > 0.0:
        floor = sigma_f2 * sum(a ** (-2.0 * s) for s in range(1, N + 1))
        err_var = err_var + floor
    return signal_scale, err_var


def find_theta_power(P: float, sigma_b2: float, sigma_f2: float, N: int,
                     bits: int) -> float:
    """Message-point energy minimizing the predicted block error rate.

    The mapping of messages onto the state leaves the symbol energy free;
    more energy widens the constellation but forces a smaller system gain
    through the power constraint.  A deterministic grid search on the
    exact error statistics picks the trade-off per configuration.
    """
    from scipy.special import erfc

    best_power, best_err = P, math.inf
    m = 2.0 ** bits
    for ratio in np.geomspace(0.25, 8.0, 25):
        theta_power = ratio * P
        try:
            a = find_a_two_user(P, sigma_b2, N, sigma_f2, theta_power)
        except SolverError:
            continue
        scale, err_var = design_stats(a, P, sigma_b2, sigma_f2, N, theta_power)
        eta = math.sqrt(3.0 * theta_power / (m * m - 1.0))
        arg = scale * eta / np.sqrt(err_var)
        ser = float(np.mean((1.0 - 1.0 / m) * erfc(arg / math.sqrt(2.0))))
        if ser < best_err:
            best_err, best_power = ser, theta_power
    return best_power


@dataclass(frozen=True)
class LqgRateSolution:
    """Cooperation factor and the symmetric per-user rate bound it yields."""

    snr: float
    L: int
    phi: float
    bound: float  # per-user rate, (1/2L) log2(1 + snr*phi)

    @property
    def sum_bound(self) -> float:
        return self.L * self.bound


def lqg_symmetric_rate(snr: float, L: int) -> LqgRateSolution:
    """Symmetric-rate bound of linear state-space feedback codes.

    The cooperation factor phi in [1, L] solves
    (1 + snr*phi)^(L-1) = (1 + (snr/L)*phi*(L - phi))^L
    and the per-user bound is (1/2L) log2(1 + snr*phi).
    """
    if snr <= 0.0:
        raise ValueError("SNR must be positive")
    if L < 1:
        raise ValueError("user count must be >= 1")
    if L == 1:
        return LqgRateSolution(snr=snr, L=1, phi=1.0, bound=0.5 * math.log2(1.0 + snr))

    def gap(phi: float) -> float:
        return (L - 1) * math.log1p(snr * phi) - L * math.log1p(snr / L * phi * (L - phi))

    phi = bisect_root(gap, 1.0, float(L))
    if abs(gap(phi)) > 1e-10:
        raise SolverError(f"cooperation factor residual {abs(gap(phi)):.3e}")
    bound = math.log2(1.0 + snr * phi) / (2.0 * L)
    return LqgRateSolution(snr=snr, L=L, phi=phi, bound=bound)


class LqgCode:
    """Two-user state-space feedback code at a fixed blocklength.

    Message points use the shared PAM constellation; their energy is a free
    design parameter, optimized per configuration unless given, and the
    system gain absorbs it through the finite-blocklength power search.
    """

    def __init__(self, P: float, sigma_b2: float, sigma_f2: float, bits: int,
                 N: int, theta_power: float | None = None, a: float | None = None):
        if theta_power is None:
            theta_power = find_theta_power(P, sigma_b2, sigma_f2, N, bits)
        self.name = "lqg"
        self.users = 2
        self.uses = N
        self.bits = bits
        self.P = P
        self.sigma_b2 = sigma_b2
        self.sigma_f2 = sigma_f2
        self.theta_power = theta_power
        if a is None:
            a = find_a_two_user(P, sigma_b2, N, sigma_f2, theta_power)
        self.a = a
        self.A_diag = np.array([self.a, -self.a])
        A = np.diag(self.A_diag)
        b = np.ones(2)
        self.G, self.c = riccati_gain(A, b)
        self.signal_scale, self.error_variance = design_stats(
            self.a, P, sigma_b2, sigma_f2, N, theta_power)
        self.constellation = make_constellation(bits, theta_power)

    def start(self, messages: np.ndarray) -> "_LqgEncoder":
        return _LqgEncoder(self, messages)

    def decode(self, y: np.ndarray) -> np.ndarray:
        # theta_hat_l = -sum_t a_l^(-t) y_l[t]; running powers avoid overflow,
        # and the known message-transient shrinkage is divided out.
        batch = y.shape[-1]
        out = np.empty((2, batch), dtype=np.int64)
        for ell in range(2):
            a_ell = self.A_diag[ell]
            scale = 1.0
            acc = np.zeros(batch)
            for t in range(self.uses):
                scale /= a_ell
                acc += scale * y[ell, t]
            out[ell] = demap(-acc / self.signal_scale[ell], self.constellation)
        return out


class _LqgEncoder:
    def __init__(self, code: LqgCode, messages: np.ndarray):
        self.code = code
        self.state = np.stack([map_message(messages[0], code.constellation),
                               map_message(messages[1], code.constellation)])

    def transmit(self, t: int) -> np.ndarray:
        return -(self.code.c @ self.state)

    def consume(self, t: int, z: np.ndarray) -> None:
        # Feedback is the transmitter's reconstruction of each observation.
        self.state = self.code.A_diag[:, None] * self.state + z
