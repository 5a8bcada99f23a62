"""Spreading-based linear feedback code with a geometric cancellation matrix.

The transmitter sends each user's PAM symbol once in a short TDD-like
preamble and spends the remaining channel uses cancelling, for every user
simultaneously, the noise that corrupted earlier rounds.  The cancellation
weights form a strictly lower-triangular Toeplitz matrix parameterized by a
decay base ``beta``; per-user diagonal Hadamard spreading keeps the users'
cancellation streams orthogonal.  Receivers apply a linear combiner to the
stacked observations.

The module provides the matrix family, power solvers, the combiner and its
output SNR, closed-form block-error and sum-capacity predictions, and a
time-domain trial runner whose stacked observations agree entrywise with
the matrix model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfc

from .modulation import make_constellation, map_message, demap
from .solvers import SolverError, bisect_root

__all__ = [
    "BmclDesign",
    "CapacityResult",
    "hadamard_rows",
    "spreading_matrix",
    "base_matrix",
    "base_matrix_energy",
    "base_matrix_energy_closed",
    "asymptotic_energy_rate",
    "solve_beta",
    "solve_beta_asymptotic",
    "noise_covariance",
    "combiner",
    "combiner_asymptotic",
    "output_snr",
    "closed_form_noise_terms",
    "pam_block_error",
    "bler_prediction",
    "make_design",
    "optimize_gamma",
    "sum_capacity",
    "BmclCode",
]


def qfunc(x):
    """Upper-tail probability of the standard normal."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def hadamard_rows(L: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order L (rows mutually orthogonal, +-1)."""
    if L < 1 or (L & (L - 1)) != 0:
        raise ValueError(f"user count must be a power of 2, got {L}")
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < L:
        h = np.block([[h, h], [h, -h]])
    return h


def spreading_matrix(ell: int, size: int, L: int) -> np.ndarray:
    """Diagonal +-1 spreading for user ``ell`` (0-based), period L.

    Entry (i, i) repeats the user's Hadamard row at position i mod L, so
    squaring any spreading matrix gives the identity.
    """
    rows = hadamard_rows(L)
    if not 0 <= ell < L:
        raise ValueError(f"user index out of range [0, {L}), got {ell}")
    pattern = rows[ell][np.arange(size) % L]
    return np.diag(pattern.astype(float))


def base_matrix(beta: float, L: int, n_hat: int) -> np.ndarray:
    """Strictly lower-triangular cancellation matrix, Toeplitz in (t - m).

    The entry at lag d = t - m - 1 is
    -((1 - beta^(2L)) / (L*beta)) * beta^(L*floor(d/L) - (d mod L)).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"decay base must lie in (0, 1), got {beta}")
    if n_hat < 0:
        raise ValueError("matrix size must be non-negative")
    size = n_hat + 1
    f = np.zeros((size, size))
    if n_hat == 0:
        return f
    d = np.arange(n_hat)
    vals = -((1.0 - beta ** (2 * L)) / (L * beta)) * beta ** (L * (d // L) - (d % L))
    for lag, v in enumerate(vals):
        idx = np.arange(size - 1 - lag)
        f[idx + 1 + lag, idx] = v
    return f


def base_matrix_energy(beta: float, L: int, n_hat: int) -> float:
    """Squared Frobenius norm of the cancellation matrix, by direct summation."""
    f = base_matrix(beta, L, n_hat)
    return float(np.sum(f * f))


def base_matrix_energy_closed(beta: float, L: int, n_hat: int) -> float:
    """Closed form of the matrix energy; cross-check for the direct sum."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"decay base must lie in (0, 1), got {beta}")
    k = np.arange(n_hat)
    coeff = ((beta ** (2 * L) - 1.0) / (L * beta)) ** 2
    return float(coeff * np.sum((n_hat - k) * beta ** (2 * k - 4 * (k % L))))


def asymptotic_energy_rate(beta: float, L: int) -> float:
    """Large-blocklength energy per channel use of the cancellation matrix."""
    b2l = beta ** (2 * L)
    return (1.0 - b2l) ** 2 / (L * L * b2l * (1.0 - beta * beta))


def _log_asymptotic_energy_rate(beta: float, L: int) -> float:
    # Log-domain version; stable where beta**(2L) under/overflows.
    lb = math.log(beta)
    log_1mb2l = math.log1p(-math.exp(2 * L * lb)) if 2 * L * lb < -1e-12 else math.log(-2 * L * lb)
    log_1mb2 = math.log1p(-beta * beta) if beta < 0.999999 else math.log(-2.0 * lb)
    return 2.0 * log_1mb2l - 2.0 * math.log(L) - 2 * L * lb - log_1mb2


def solve_beta(gamma: float, P: float, sigma_b2: float, sigma_f2: float,
               L: int, N: int) -> float:
    """Decay base whose finite-blocklength matrix energy meets the power budget.

    Solves ||F||_F^2 = N*P*gamma / (L*(sigma_b2 + sigma_f2)) by bisection on
    the bracket (1e-6, 1 - 1e-6); the energy is monotone decreasing in beta.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"power sharing parameter must lie in (0, 1), got {gamma}")
    if N <= L:
        raise ValueError(f"need more channel uses than users, got N={N}, L={L}")
    n_hat = N - L
    target = N * P * gamma / (L * (sigma_b2 + sigma_f2))
    lo, hi = 1e-6, 1.0 - 1e-6
    if base_matrix_energy(lo, L, n_hat) < target or base_matrix_energy(hi, L, n_hat) > target:
        raise SolverError("power target is outside the reachable energy range")
    beta = bisect_root(lambda b: base_matrix_energy(b, L, n_hat) - target, lo, hi)
    resid = abs(base_matrix_energy(beta, L, n_hat) - target) / target
    if resid > 1e-10:
        raise SolverError(f"energy residual {resid:.3e} exceeds tolerance")
    return beta


def solve_beta_asymptotic(gamma: float, P: float, sigma_b2: float, sigma_f2: float,
                          L: int) -> float:
    """Decay base meeting the power budget in the large-blocklength limit."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"power sharing parameter must lie in (0, 1], got {gamma}")
    target = P * gamma / (L * (sigma_b2 + sigma_f2))
    return _solve_asymptotic_rate(target, L)


def _solve_asymptotic_rate(target: float, L: int) -> float:
    log_target = math.log(target)
    beta = bisect_root(lambda b: _log_asymptotic_energy_rate(b, L) - log_target,
                       1e-9, 1.0 - 1e-13)
    resid = abs(_log_asymptotic_energy_rate(beta, L) - log_target)
    if resid > 1e-10:
        raise SolverError(f"asymptotic energy residual {resid:.3e} exceeds tolerance")
    return beta


def noise_covariance(F: np.ndarray, F_users: list[np.ndarray],
                     sigma_b2: float, sigma_f2: float) -> np.ndarray:
    """Covariance of the stacked noise seen by any user after de-spreading."""
    size = F.shape[0]
    r = sigma_b2 * (np.eye(size) + F + F.T)
    acc = np.zeros_like(r)
    for fu in F_users:
        acc += fu @ fu.T
    r += (sigma_b2 + sigma_f2) * acc
    return 0.5 * (r + r.T)


def combiner(R: np.ndarray) -> np.ndarray:
    """SNR-maximizing combiner with unit gain on the symbol slot."""
    e1 = np.zeros(R.shape[0])
    e1[0] = 1.0
    try:
        v = np.linalg.solve(R, e1)
    except np.linalg.LinAlgError as exc:
        raise SolverError("noise covariance is singular") from exc
    return v / v[0]


def combiner_asymptotic(beta: float, n_hat: int) -> np.ndarray:
    """Geometric combiner that the optimal one approaches at large blocklength."""
    return beta ** np.arange(n_hat + 1, dtype=float)


@dataclass(frozen=True)
class BmclDesign:
    """Frozen per-configuration design shared read-only across trials."""

    L: int
    N: int
    n_hat: int
    P: float
    sigma_b2: float
    sigma_f2: float
    gamma: float
    beta: float
    theta_power: float
    F: np.ndarray
    F_users: tuple[np.ndarray, ...]
    C_users: tuple[np.ndarray, ...]
    q: np.ndarray
    R: np.ndarray
    snr: float


def output_snr(design: BmclDesign) -> float:
    """Combiner-output SNR, identical for every user by spreading symmetry.

    Numerator is the symbol energy (1/L)*P*N*(1 - gamma); the denominator
    collects the residual forward noise through (I + F), the other users'
    cancellation leakage, and the feedback noise forwarded by F.
    """
    snrs = per_user_snr(design)
    return float(snrs[0])


def per_user_snr(design: BmclDesign) -> np.ndarray:
    q, F = design.q, design.F
    num = design.P * design.N * (1.0 - design.gamma) / design.L
    self_term = design.sigma_b2 * float(np.sum((q @ (np.eye(F.shape[0]) + F)) ** 2))
    fb_term = design.sigma_f2 * float(np.sum((q @ F) ** 2))
    out = np.empty(design.L)
    for ell in range(design.L):
        q_ell = design.C_users[ell].diagonal() * q
        cross = 0.0
        for i in range(design.L):
            if i == ell:
                continue
            cross += float(np.sum(((q_ell * design.C_users[i].diagonal()) @ F) ** 2))
        denom = self_term + (design.sigma_b2 + design.sigma_f2) * cross + fb_term
        out[ell] = num / denom
    return out


def closed_form_noise_terms(beta: float, L: int, n_hat: int) -> tuple[float, float]:
    """Closed forms of the two perfect-feedback denominator terms.

    Valid for the geometric combiner: returns (||q^T (I+F)||^2,
    sum_{i != l} ||q_l^T C_i F||^2).  Both are exact at any blocklength.
    """
    psi = beta ** (2 * n_hat)
    d = np.arange(n_hat)
    psi += float(np.sum(
        beta ** (2 * (n_hat - d - 1) + 4 * L * (d // L))
        * (1.0 - (d % L + 1) * (1.0 - beta ** (2 * L)) / L) ** 2
    ))
    r = np.arange(L)
    zeta = float((1.0 - beta ** (2 * L)) / (L * L) * np.sum(
        (L * r - r * r)
        * beta ** (2.0 * (n_hat - r))
        * (1.0 - beta ** (2.0 * L * ((n_hat - r) // L + 1)))
    ))
    return psi, zeta


def pam_block_error(snr: float, bits: int) -> float:
    """Exact symbol-error probability of 2^bits-PAM at a post-combining SNR.

    Nearest-neighbor detection on the real channel: with M = 2^bits points
    of mean energy S and estimation noise of variance v (snr = S/v), the
    error probability is 2*(1 - 1/M)*Q(sqrt(3*snr/(M^2 - 1))).
    """
    m = 2.0 ** bits
    return float(2.0 * (1.0 - 1.0 / m) * qfunc(math.sqrt(3.0 * snr / (m * m - 1.0))))


def bler_prediction(snr: float, N: int, rate: float) -> float:
    """Predicted per-user block error rate at a combiner-output SNR.

    ``rate`` is the per-user code rate K/N, so the symbol carries N*rate
    bits.  The prediction is the exact PAM error probability at that SNR;
    it matches Monte Carlo whenever the estimation noise is Gaussian.
    """
    if snr <= 0.0:
        raise ValueError("SNR must be positive")
    bits = N * rate
    m = 2.0 ** bits
    return float(2.0 * (1.0 - 1.0 / m) * qfunc(math.sqrt(3.0 * snr / (m * m - 1.0))))


def make_design(P: float, sigma_b2: float, sigma_f2: float, L: int, N: int,
                gamma: float, *, asymptotic_combiner: bool = False) -> BmclDesign:
    """Solve the decay base and assemble the full per-configuration design."""
    beta = solve_beta(gamma, P, sigma_b2, sigma_f2, L, N)
    n_hat = N - L
    F = base_matrix(beta, L, n_hat)
    C_users = tuple(spreading_matrix(ell, n_hat + 1, L) for ell in range(L))
    F_users = tuple(c @ F @ c.T for c in C_users)
    R = noise_covariance(F, list(F_users), sigma_b2, sigma_f2)
    if asymptotic_combiner:
        q = combiner_asymptotic(beta, n_hat)
    else:
        q = combiner(R)
    theta_power = (1.0 - gamma) * N * P / L
    design = BmclDesign(L=L, N=N, n_hat=n_hat, P=P, sigma_b2=sigma_b2,
                        sigma_f2=sigma_f2, gamma=gamma, beta=beta,
                        theta_power=theta_power, F=F, F_users=F_users,
                        C_users=C_users, q=q, R=R, snr=0.0)
    return replace(design, snr=output_snr(design))


def optimize_gamma(P: float, sigma_b2: float, sigma_f2: float, L: int, N: int,
                   step: float = 0.01) -> BmclDesign:
    """Grid search over the power-sharing parameter, returning the best design."""
    best: BmclDesign | None = None
    grid = np.arange(step, 1.0, step)
    for gamma in grid:
        design = make_design(P, sigma_b2, sigma_f2, L, N, float(gamma))
        if best is None or design.snr > best.snr:
            best = design
    if best is None:
        raise SolverError("empty gamma grid")
    return best


@dataclass(frozen=True)
class CapacityResult:
    """Sum-rate limit of the scheme and its many-user saturation value."""

    snr: float
    L: int
    beta_inf: float
    c_sum: float
    alpha_limit: float
    c_limit: float


def sum_capacity(snr: float, L: int) -> CapacityResult:
    """Maximum sum rate under perfect feedback, with the many-user limit.

    beta_inf solves the asymptotic power equation at full cancellation
    power; the sum rate is -L*log2(beta_inf).  The limit as the user count
    grows is alpha/ln 2 with (1 - e^(-2a))^2 / (2a e^(-2a)) = snr.
    """
    if snr <= 0.0:
        raise ValueError("SNR must be positive")
    if L < 1:
        raise ValueError("user count must be >= 1")
    beta_inf = _solve_asymptotic_rate(snr / L, L)
    c_sum = -L * math.log2(beta_inf)

    def alpha_gap(a: float) -> float:
        return 2.0 * math.log1p(-math.exp(-2.0 * a)) + 2.0 * a - math.log(2.0 * a) - math.log(snr)

    hi = 1.0
    while alpha_gap(hi) < 0.0:
        hi *= 2.0
    alpha = bisect_root(alpha_gap, 1e-12, hi)
    return CapacityResult(snr=snr, L=L, beta_inf=beta_inf, c_sum=c_sum,
                          alpha_limit=alpha, c_limit=alpha / math.log(2.0))


class BmclCode:
    """Time-domain runner for the spreading-based feedback code.

    The first L rounds carry the users' PAM symbols; afterwards the
    transmitter reconstructs each user's observation noise from feedback
    and sends the spread cancellation combination.  Receiver ``ell`` stacks
    its own preamble slot with the cancellation rounds and applies the
    de-spread combiner.
    """

    def __init__(self, P: float, sigma_b2: float, sigma_f2: float, bits: int,
                 N: int, L: int = 2, gamma: float | None = None,
                 gamma_step: float = 0.01):
        if gamma is None:
            self.design = optimize_gamma(P, sigma_b2, sigma_f2, L, N, step=gamma_step)
        else:
            self.design = make_design(P, sigma_b2, sigma_f2, L, N, gamma)
        self.name = "bmcl"
        self.users = L
        self.uses = N
        self.bits = bits
        self.constellation = make_constellation(bits, self.design.theta_power)
        # q_l^T y_l = (q * C_l diagonal) . y_l since the spreading is diagonal
        self._q_users = np.stack([d.diagonal() * self.design.q for d in self.design.C_users])

    def start(self, messages: np.ndarray) -> "_BmclEncoder":
        return _BmclEncoder(self, messages)

    def decode(self, y: np.ndarray) -> np.ndarray:
        d = self.design
        batch = y.shape[-1]
        out = np.empty((d.L, batch), dtype=np.int64)
        for ell in range(d.L):
            stacked = np.concatenate([y[ell, ell:ell + 1, :], y[ell, d.L:, :]], axis=0)
            theta_hat = self._q_users[ell] @ stacked
            out[ell] = demap(theta_hat, self.constellation)
        return out

    def stacked_observation(self, y: np.ndarray, ell: int) -> np.ndarray:
        """Receiver ``ell``'s stacked vector (own preamble slot + tail)."""
        return np.concatenate([y[ell, ell:ell + 1, :], y[ell, self.design.L:, :]], axis=0)


class _BmclEncoder:
    def __init__(self, code: BmclCode, messages: np.ndarray):
        d = code.design
        self.code = code
        self.theta = map_message(messages, code.constellation)
        batch = messages.shape[-1]
        # Per-user reconstructed noise, stacked as (own slot, tail rounds).
        self.nu = np.zeros((d.L, d.n_hat + 1, batch))
        self._x_last = np.zeros(batch)

    def transmit(self, t: int) -> np.ndarray:
        d = self.code.design
        if t < d.L:
            x = self.theta[t]
        else:
            k = t - d.L
            x = np.zeros(self.nu.shape[-1])
            for ell in range(d.L):
                x += d.F_users[ell][k + 1, :k + 1] @ self.nu[ell, :k + 1]
        self._x_last = x
        return x

    def consume(self, t: int, z: np.ndarray) -> None:
        d = self.code.design
        resid = z - self._x_last[None, :]
        if t < d.L:
            # Only the slot owner's noise enters its cancellation vector.
            self.nu[t, 0] = resid[t]
        else:
            self.nu[:, t - d.L + 1] = resid
