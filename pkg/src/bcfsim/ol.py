"""LMMSE refinement feedback codes: two-user scheme, its two-sample variant,
and the single-user recursion they degenerate to.

After a short preamble that transmits each user's PAM symbol once, every
round sends a power-normalized combination of the users' current estimation
errors, which the transmitter mirrors from feedback.  Receivers shrink
their estimates with precomputed LMMSE gains; the two-sample variant
regresses on the current and previous observations jointly.

All per-round constants are deterministic.  They are produced by an exact
second-moment propagation of the joint state (true errors, mirrored
errors, last observations), run once per configuration:

* a perfect-feedback pass yields the error variances, their correlation,
  and the receiver gains;
* with noisy feedback a second pass, holding those gains fixed, tracks the
  mirror divergence and rescales the transmit combination so the average
  power still meets the budget exactly in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .modulation import demap, make_constellation, map_message
from .solvers import SolverError

__all__ = ["RoundPlan", "OlPlan", "plan_block", "OlCode", "SkCode"]


def _sgn_star(x: float) -> float:
    return 1.0 if x >= 0.0 else -1.0


@dataclass(frozen=True)
class RoundPlan:
    """Constants applied in one refinement round."""

    tx: np.ndarray       # transmit weight per mirrored error, shape (L,)
    rx_cur: np.ndarray   # receiver weight on the new observation, (L,)
    rx_prev: np.ndarray  # receiver weight on the previous observation, (L,)
    kappa: float         # power renormalization (1 under perfect feedback)
    exp_y2: float        # tracked second moment of each observation


@dataclass(frozen=True)
class OlPlan:
    """Per-round constants plus tracked moments for one configuration."""

    users: int
    uses: int
    P: float
    sigma_b2: float
    sigma_f2: float
    g: float
    two_sample: bool
    init_gain: float            # sqrt(P) / (P + sigma_b2)
    rounds: tuple[RoundPlan, ...]
    alpha: np.ndarray           # tracked error variance, (R+1, L); row 0 = preamble
    rho: np.ndarray             # tracked error correlation, (R+1,)
    final_mse: np.ndarray       # error variance after the last round, (L,)
    signal_scale: np.ndarray    # E[theta_hat * theta] / E[theta^2] at the end, (L,)

    @property
    def refinements(self) -> int:
        return len(self.rounds)


class _MomentState:
    """Joint second moments of (errors, mirrored errors, prev obs, prev fb,
    message symbols).  Messages are carried so the deterministic shrinkage of
    the final estimate toward zero can be removed before demapping."""

    def __init__(self, users: int, P: float, sigma_b2: float, sigma_f2: float):
        self.users = users
        q0 = math.sqrt(P) / (P + sigma_b2)
        alpha0 = sigma_b2 / (P + sigma_b2)
        n = 5 * users
        cov = np.zeros((n, n))
        for ell in range(users):
            e, m, th = ell, users + ell, 4 * users + ell
            cov[e, e] = alpha0
            cov[e, m] = cov[m, e] = alpha0
            cov[m, m] = alpha0 + q0 * q0 * sigma_f2
            cov[th, th] = 1.0
            # MMSE preamble estimate shrinks toward zero: E[eps*theta] = -alpha0
            cov[e, th] = cov[th, e] = -alpha0
            cov[m, th] = cov[th, m] = -alpha0
        self.cov = cov
        self.init_gain = q0
        self.alpha0 = alpha0

    def idx(self, block: str, ell: int) -> int:
        return {"e": 0, "m": 1, "y": 2, "z": 3, "t": 4}[block] * self.users + ell

    def error_theta_cov(self) -> np.ndarray:
        return np.array([self.cov[self.idx("e", l), self.idx("t", l)]
                         for l in range(self.users)])


def _propagate(users: int, uses: int, P: float, sigma_b2: float, sigma_f2: float,
               g: float, two_sample: bool,
               fixed: tuple[RoundPlan, ...] | None = None):
    """Run the exact covariance recursion; return (plans, alpha, rho, final_cov).

    With ``fixed`` unset, gains are derived from the running moments (the
    perfect-feedback design pass).  With a previous plan supplied, its
    gains are reused and only the transmit scale is re-solved against the
    mirrored-error covariance, which is how feedback noise enters.
    """
    state = _MomentState(users, P, sigma_b2, sigma_f2)
    L = users
    refinements = uses - (2 if users == 2 else 1)
    plans: list[RoundPlan] = []
    alpha_track = [np.full(L, state.alpha0)]
    rho_track = [0.0]

    ne = 5 * L          # state size
    next_size = ne + 2 * L  # state + forward and feedback noises
    for r in range(refinements):
        cov = state.cov
        ext = np.zeros((next_size, next_size))
        ext[:ne, :ne] = cov
        for ell in range(L):
            ext[ne + ell, ne + ell] = sigma_b2
            ext[ne + L + ell, ne + L + ell] = sigma_f2

        alpha = np.array([cov[state.idx("e", l), state.idx("e", l)] for l in range(L)])
        if np.any(alpha <= 0.0):
            raise SolverError("error variance tracker became non-positive")
        if L == 2:
            rho = cov[state.idx("e", 0), state.idx("e", 1)] / math.sqrt(alpha[0] * alpha[1])
            D = 1.0 + g * g + 2.0 * g * abs(rho)
            mix = np.array([1.0 / math.sqrt(alpha[0]),
                            g * _sgn_star(rho) / math.sqrt(alpha[1])])
        else:
            rho = 0.0
            D = 1.0
            mix = np.array([1.0 / math.sqrt(alpha[0])])
        tx_unnorm = math.sqrt(P / D) * mix

        if fixed is not None:
            rx_cur = fixed[r].rx_cur
            rx_prev = fixed[r].rx_prev
        else:
            rx_cur = np.zeros(L)
            rx_prev = np.zeros(L)

        m_block = [state.idx("m", l) for l in range(L)]
        mirror_cov = cov[np.ix_(m_block, m_block)]
        x_power = float(tx_unnorm @ mirror_cov @ tx_unnorm)
        kappa = math.sqrt(P / x_power)
        tx = kappa * tx_unnorm

        # Rows over the extended variable vector [state, n_b, n_f].
        x_row = np.zeros(next_size)
        for l in range(L):
            x_row[state.idx("m", l)] = tx[l]
        y_rows, z_rows = [], []
        for l in range(L):
            yr = x_row.copy()
            yr[ne + l] = 1.0
            zr = yr.copy()
            zr[ne + L + l] = 1.0
            y_rows.append(yr)
            z_rows.append(zr)

        def mom(a: np.ndarray, b: np.ndarray) -> float:
            return float(a @ ext @ b)

        exp_y2 = mom(y_rows[0], y_rows[0])
        if fixed is None:
            for l in range(L):
                e_row = np.zeros(next_size)
                e_row[state.idx("e", l)] = 1.0
                use_window = two_sample and r >= 1
                if use_window:
                    yp_row = np.zeros(next_size)
                    yp_row[state.idx("y", l)] = 1.0
                    Q = np.array([[mom(y_rows[l], y_rows[l]), mom(y_rows[l], yp_row)],
                                  [mom(y_rows[l], yp_row), mom(yp_row, yp_row)]])
                    b = np.array([mom(e_row, y_rows[l]), mom(e_row, yp_row)])
                    try:
                        w = np.linalg.solve(Q, b)
                    except np.linalg.LinAlgError as exc:
                        raise SolverError("degenerate observation window") from exc
                    rx_cur[l], rx_prev[l] = w
                else:
                    rx_cur[l] = mom(e_row, y_rows[l]) / mom(y_rows[l], y_rows[l])
                    rx_prev[l] = 0.0

        # New state rows: updated errors, mirrors, and the kept observations.
        T = np.zeros((ne, next_size))
        for l in range(L):
            e_row = np.zeros(next_size)
            e_row[state.idx("e", l)] = 1.0
            m_row = np.zeros(next_size)
            m_row[state.idx("m", l)] = 1.0
            yp_row = np.zeros(next_size)
            yp_row[state.idx("y", l)] = 1.0
            zp_row = np.zeros(next_size)
            zp_row[state.idx("z", l)] = 1.0
            T[state.idx("e", l)] = e_row - rx_cur[l] * y_rows[l] - rx_prev[l] * yp_row
            T[state.idx("m", l)] = m_row - rx_cur[l] * z_rows[l] - rx_prev[l] * zp_row
            T[state.idx("y", l)] = y_rows[l]
            T[state.idx("z", l)] = z_rows[l]
            T[state.idx("t", l), state.idx("t", l)] = 1.0
        state.cov = T @ ext @ T.T
        state.cov = 0.5 * (state.cov + state.cov.T)

        plans.append(RoundPlan(tx=tx, rx_cur=rx_cur.copy(), rx_prev=rx_prev.copy(),
                               kappa=kappa, exp_y2=exp_y2))
        alpha_track.append(np.array([state.cov[state.idx("e", l), state.idx("e", l)]
                                     for l in range(L)]))
        if L == 2:
            a = alpha_track[-1]
            rho_track.append(state.cov[state.idx("e", 0), state.idx("e", 1)]
                             / math.sqrt(a[0] * a[1]))
        else:
            rho_track.append(0.0)

    return plans, np.array(alpha_track), np.array(rho_track), state


def plan_block(users: int, uses: int, P: float, sigma_b2: float, sigma_f2: float,
               *, g: float = 1.0, two_sample: bool = False) -> OlPlan:
    """Design all per-round constants for one configuration.

    The error/correlation trackers and receiver gains always come from the
    perfect-feedback pass; with noisy feedback only the transmit scale is
    re-solved so the expected power stays on budget.
    """
    if users not in (1, 2):
        raise ValueError("the refinement code supports 1 or 2 users")
    min_uses = 2 if users == 2 else 1
    if uses < min_uses:
        raise ValueError(f"need at least {min_uses} channel uses for {users} users")
    if g < 0.0:
        raise ValueError("the balance gain must be non-negative")

    plans, alpha, rho, state = _propagate(users, uses, P, sigma_b2, 0.0, g, two_sample)
    if sigma_f2 > 0.0:
        base = tuple(plans)
        plans, _, _, state = _propagate(users, uses, P, sigma_b2, sigma_f2, g,
                                        two_sample, fixed=base)
        final = np.array([state.cov[state.idx("e", l), state.idx("e", l)]
                          for l in range(users)])
    else:
        final = alpha[-1]
    q0 = math.sqrt(P) / (P + sigma_b2)
    scale = 1.0 + state.error_theta_cov()
    return OlPlan(users=users, uses=uses, P=P, sigma_b2=sigma_b2, sigma_f2=sigma_f2,
                  g=g, two_sample=two_sample, init_gain=q0, rounds=tuple(plans),
                  alpha=alpha, rho=rho, final_mse=final, signal_scale=scale)


class _RefinementEncoder:
    """Transmitter side: preamble, then mirrored-error combinations.

    The transmitter replays each receiver's estimate update with feedback in
    place of the observation, so with perfect feedback its copy of the
    estimation error is bit-identical to the receiver's.
    """

    def __init__(self, code: "OlCode | SkCode", messages: np.ndarray):
        self.code = code
        self.plan = code.plan
        self.theta = map_message(messages, code.constellation)  # (L, B)
        self.sqrtP = math.sqrt(code.plan.P)
        batch = messages.shape[-1]
        self.est = np.zeros((code.users, batch))      # mirrored estimates
        self.z_prev = np.zeros((code.users, batch))

    def mirror_error(self) -> np.ndarray:
        return self.est - self.theta

    def transmit(self, t: int) -> np.ndarray:
        L = self.code.users
        if t < L:
            return self.sqrtP * self.theta[t]
        rp = self.plan.rounds[t - L]
        return rp.tx @ self.mirror_error()

    def consume(self, t: int, z: np.ndarray) -> None:
        L = self.code.users
        if t < L:
            self.est[t] = self.plan.init_gain * z[t]
            return
        rp = self.plan.rounds[t - L]
        self.est -= rp.rx_cur[:, None] * z
        if t - L >= 1:
            self.est -= rp.rx_prev[:, None] * self.z_prev
        self.z_prev = z.copy()


class _RefinementCodeBase:
    """Shared constructor/decoder for the one- and two-user refinement codes."""

    def __init__(self, users: int, name: str, P: float, sigma_b2: float,
                 sigma_f2: float, bits: int, N: int, g: float = 1.0,
                 two_sample: bool = False):
        self.name = name
        self.users = users
        self.uses = N
        self.bits = bits
        self.plan = plan_block(users, N, P, sigma_b2, sigma_f2, g=g,
                               two_sample=two_sample)
        self.constellation = make_constellation(bits, 1.0)

    def start(self, messages: np.ndarray) -> _RefinementEncoder:
        return _RefinementEncoder(self, messages)

    def decode(self, y: np.ndarray) -> np.ndarray:
        plan = self.plan
        L = self.users
        batch = y.shape[-1]
        theta_hat = np.empty((L, batch))
        for ell in range(L):
            theta_hat[ell] = plan.init_gain * y[ell, ell]
        for r, rp in enumerate(plan.rounds):
            t = L + r
            theta_hat -= rp.rx_cur[:, None] * y[:, t]
            if r >= 1:
                theta_hat -= rp.rx_prev[:, None] * y[:, t - 1]
        # The MMSE chain leaves a known shrinkage toward zero; divide it out
        # so nearest-point detection sees an unbiased estimate.
        theta_hat /= plan.signal_scale[:, None]
        out = np.empty((L, batch), dtype=np.int64)
        for ell in range(L):
            out[ell] = demap(theta_hat[ell], self.constellation)
        return out


class OlCode(_RefinementCodeBase):
    """Two-user refinement code; ``two_sample=True`` selects the variant that
    regresses each error on the current and previous observations."""

    def __init__(self, P: float, sigma_b2: float, sigma_f2: float, bits: int,
                 N: int, g: float = 1.0, two_sample: bool = False):
        name = "eol" if two_sample else "ol"
        super().__init__(2, name, P, sigma_b2, sigma_f2, bits, N, g=g,
                         two_sample=two_sample)


class SkCode(_RefinementCodeBase):
    """Single-user refinement code (used directly and as the TDD baseline)."""

    def __init__(self, P: float, sigma_b2: float, sigma_f2: float, bits: int, N: int):
        super().__init__(1, "sk", P, sigma_b2, sigma_f2, bits, N)
