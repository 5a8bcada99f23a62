"""Independent oracles used by the test suite.

The linear schemes are linear in the tape primitives (message symbols and
noise draws), so every signal can be carried as an exact coefficient
vector and every second moment evaluated as a weighted dot product.  The
oracle below re-derives the two-user refinement code from its defining
equations with that algebra, sharing no code with the implementation's
covariance recursion.
"""

from __future__ import annotations

import math

import numpy as np


def qfunc(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def pam_ser(snr: float, bits: int) -> float:
    """Nearest-neighbor symbol error rate of 2^bits PAM at a given SNR."""
    m = 2.0 ** bits
    return 2.0 * (1.0 - 1.0 / m) * qfunc(math.sqrt(3.0 * snr / (m * m - 1.0)))


class TapeAlgebra:
    """Signals as exact linear combinations of (thetas, n_b draws, n_f draws)."""

    def __init__(self, users: int, uses: int, sigma_b2: float, sigma_f2: float):
        self.L = users
        self.N = uses
        self.dim = users + 2 * users * uses
        self.var = np.concatenate([
            np.ones(users),
            np.full(users * uses, sigma_b2),
            np.full(users * uses, sigma_f2),
        ])

    def zero(self) -> np.ndarray:
        return np.zeros(self.dim)

    def theta(self, ell: int) -> np.ndarray:
        v = self.zero()
        v[ell] = 1.0
        return v

    def nb(self, ell: int, t: int) -> np.ndarray:
        v = self.zero()
        v[self.L + ell * self.N + t] = 1.0
        return v

    def nf(self, ell: int, t: int) -> np.ndarray:
        v = self.zero()
        v[self.L + self.L * self.N + ell * self.N + t] = 1.0
        return v

    def mom(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b * self.var))

    def draw(self, rng: np.random.Generator, theta_values: np.ndarray) -> np.ndarray:
        """Numeric values of all primitives for one trial."""
        vals = rng.standard_normal(self.dim) * np.sqrt(self.var)
        vals[: self.L] = theta_values
        return vals


def refinement_oracle(users: int, uses: int, P: float, sigma_b2: float,
                      g: float = 1.0, two_sample: bool = False):
    """Re-derive the perfect-feedback refinement code with tape algebra.

    Returns per-round dictionaries of exact gains and moments plus the
    coefficient vectors of the final estimates, for direct comparison with
    the implementation's plan and per-tape outputs.
    """
    alg = TapeAlgebra(users, uses, sigma_b2, 0.0)
    q0 = math.sqrt(P) / (P + sigma_b2)
    shrink = sigma_b2 / (P + sigma_b2)
    eps = []
    for ell in range(users):
        eps.append(-shrink * alg.theta(ell) + q0 * alg.nb(ell, ell))
    y_prev = [alg.zero() for _ in range(users)]
    rounds = []
    refinements = uses - users if users == 1 else uses - 2
    start = users if users == 2 else 1
    for r in range(refinements):
        t = start + r
        alpha = np.array([alg.mom(e, e) for e in eps])
        if users == 2:
            rho = alg.mom(eps[0], eps[1]) / math.sqrt(alpha[0] * alpha[1])
            s = 1.0 if rho >= 0 else -1.0
            D = 1.0 + g * g + 2.0 * g * abs(rho)
            x = math.sqrt(P / D) * (eps[0] / math.sqrt(alpha[0])
                                    + g * s * eps[1] / math.sqrt(alpha[1]))
        else:
            rho = 0.0
            x = math.sqrt(P / alpha[0]) * eps[0]
        y = [x + alg.nb(ell, t) for ell in range(users)]
        gains = []
        new_eps = []
        for ell in range(users):
            if two_sample and r >= 1:
                Q = np.array([
                    [alg.mom(y[ell], y[ell]), alg.mom(y[ell], y_prev[ell])],
                    [alg.mom(y[ell], y_prev[ell]), alg.mom(y_prev[ell], y_prev[ell])],
                ])
                b = np.array([alg.mom(eps[ell], y[ell]),
                              alg.mom(eps[ell], y_prev[ell])])
                w = np.linalg.solve(Q, b)
                new_eps.append(eps[ell] - w[0] * y[ell] - w[1] * y_prev[ell])
                gains.append((float(w[0]), float(w[1])))
            else:
                k = alg.mom(eps[ell], y[ell]) / alg.mom(y[ell], y[ell])
                new_eps.append(eps[ell] - k * y[ell])
                gains.append((float(k), 0.0))
        rounds.append({
            "alpha": alpha,
            "rho": rho,
            "gains": gains,
            "exp_y2": alg.mom(y[0], y[0]),
            "exp_x2": alg.mom(x, x),
        })
        eps = new_eps
        y_prev = y
    final_alpha = np.array([alg.mom(e, e) for e in eps])
    return alg, rounds, eps, final_alpha
