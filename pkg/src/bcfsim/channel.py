"""AWGN broadcast channel with passive, possibly noisy, output feedback.

Every user observes the same transmitted real symbol corrupted by its own
i.i.d. Gaussian noise, and returns its most recent observation un-encoded
over an AWGN feedback link.  All randomness is derived from counter-based
(Philox) streams so that Monte Carlo runs are reproducible independently
of scheduling order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ChannelConfig",
    "TrialTape",
    "PowerAudit",
    "db_to_linear",
    "linear_to_db",
    "feedback_noise_from_db",
    "derive_stream",
    "derive_trial_rng",
    "forward_step",
    "feedback_step",
    "draw_tape",
]

_MASK64 = (1 << 64) - 1
_TRIAL_DOMAIN = 0x7472_6961_6C00


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0.0:
        return -math.inf
    return 10.0 * math.log10(x)


def feedback_noise_from_db(db: float | None, P: float = 1.0) -> float:
    """Feedback noise variance from its dB power level, relative to P=1.

    ``None`` means perfect feedback (zero variance).
    """
    if db is None:
        return 0.0
    return P * db_to_linear(db)


@dataclass(frozen=True)
class ChannelConfig:
    """Static description of one broadcast link with feedback.

    Powers and variances are linear (energy per channel use).  ``sigma_f2``
    may be zero for perfect feedback; the forward noise must be positive.
    """

    L: int
    N: int
    P: float = 1.0
    sigma_b2: float = 1.0
    sigma_f2: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError(f"user count must be >= 1, got {self.L}")
        if self.N < 1:
            raise ValueError(f"channel uses must be >= 1, got {self.N}")
        if not self.P > 0.0:
            raise ValueError(f"power budget must be positive, got {self.P}")
        if not self.sigma_b2 > 0.0:
            raise ValueError(f"forward noise variance must be positive, got {self.sigma_b2}")
        if self.sigma_f2 < 0.0:
            raise ValueError(f"feedback noise variance must be >= 0, got {self.sigma_f2}")

    @property
    def snr_b(self) -> float:
        return self.P / self.sigma_b2

    @property
    def snr_b_db(self) -> float:
        return linear_to_db(self.snr_b)

    def with_snr_db(self, snr_db: float) -> "ChannelConfig":
        """Same link with the forward noise set from an SNR in dB."""
        return replace(self, sigma_b2=self.P / db_to_linear(snr_db))


def _mix64(*words: int) -> int:
    """SplitMix-style avalanche of a word sequence into one 64-bit value."""
    h = (0x9E3779B97F4A7C15 ^ (len(words) * 0xA0761D6478BD642F)) & _MASK64
    for w in words:
        h = (h ^ (int(w) & _MASK64)) * 0xBF58476D1CE4E5B9 & _MASK64
        h = (h ^ (h >> 31)) * 0x94D049BB133111EB & _MASK64
        h ^= h >> 29
    return h


def derive_stream(seed: int, *path: int) -> np.random.Generator:
    """Counter-derived Gaussian stream for one unit of work.

    Equal ``(seed, path)`` pairs give identical streams; any difference in
    the path yields a Philox generator with an unrelated 128-bit key, so
    draws are independent of execution order or thread count.
    """
    key = (int(seed) & _MASK64, _mix64(int(seed), *path))
    return np.random.Generator(np.random.Philox(key=key))


def derive_trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Random stream owned by a single Monte Carlo trial."""
    if trial_index < 0:
        raise ValueError("trial index must be non-negative")
    return derive_stream(seed, _TRIAL_DOMAIN, trial_index)


def forward_step(x, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """One use of the broadcast link: y_l = x + n_l, n_l ~ N(0, sigma_b2).

    ``x`` may be a scalar or a batch; the output gains a leading axis of
    length ``cfg.L`` with noise independent across users.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("channel input must be finite")
    noise = rng.standard_normal((cfg.L,) + x.shape) * math.sqrt(cfg.sigma_b2)
    return x[None, ...] + noise


def feedback_step(y, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Passive feedback of the latest observations: z_l = y_l + m_l.

    With ``sigma_f2 == 0`` the feedback equals the observation exactly.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("feedback input must be finite")
    if cfg.sigma_f2 == 0.0:
        return y.copy()
    return y + rng.standard_normal(y.shape) * math.sqrt(cfg.sigma_f2)


@dataclass(frozen=True)
class TrialTape:
    """Noise realizations (and optionally signals) for a batch of trials.

    Noise is drawn for every (user, time) pair regardless of which
    observations a scheme uses, so the same tape can be replayed across
    schemes for paired comparisons.  Arrays are shaped (L, N, batch); the
    signal fields are filled in by the harness when a run is recorded.
    """

    n_b: np.ndarray
    n_f: np.ndarray
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None

    @property
    def batch(self) -> int:
        return self.n_b.shape[-1]


def draw_tape(cfg: ChannelConfig, rng: np.random.Generator, batch: int) -> TrialTape:
    """Draw forward and feedback noise for ``batch`` trials."""
    shape = (cfg.L, cfg.N, batch)
    n_b = rng.standard_normal(shape) * math.sqrt(cfg.sigma_b2)
    n_f = rng.standard_normal(shape) * math.sqrt(cfg.sigma_f2)
    return TrialTape(n_b=n_b, n_f=n_f)


class PowerAudit:
    """Running estimate of the empirical average transmit power.

    Tracks per-round and per-trial energy so both the average power and the
    per-round power can be reported with standard errors.
    """

    def __init__(self, uses: int):
        self.uses = uses
        self.trials = 0
        self._round_sum = np.zeros(uses)
        self._round_sumsq = np.zeros(uses)
        self._energy_sum = 0.0
        self._energy_sumsq = 0.0

    def add(self, x: np.ndarray) -> None:
        """Accumulate a batch of transmitted blocks, shape (N, batch)."""
        sq = x * x
        self._round_sum += sq.sum(axis=1)
        self._round_sumsq += (sq * sq).sum(axis=1)
        energy = sq.sum(axis=0)
        self._energy_sum += float(energy.sum())
        self._energy_sumsq += float((energy * energy).sum())
        self.trials += x.shape[1]

    @property
    def mean_power(self) -> float:
        if self.trials == 0:
            return 0.0
        return self._energy_sum / (self.trials * self.uses)

    @property
    def stderr(self) -> float:
        """Standard error of the mean per-use power estimate."""
        n = self.trials
        if n < 2:
            return math.inf
        mean_e = self._energy_sum / n
        var_e = max(self._energy_sumsq / n - mean_e * mean_e, 0.0) * n / (n - 1)
        return math.sqrt(var_e / n) / self.uses

    def round_power(self) -> np.ndarray:
        """Per-round mean of x^2[t] across all trials."""
        if self.trials == 0:
            return np.zeros(self.uses)
        return self._round_sum / self.trials

    def round_stderr(self) -> np.ndarray:
        n = self.trials
        if n < 2:
            return np.full(self.uses, math.inf)
        mean = self._round_sum / n
        var = np.maximum(self._round_sumsq / n - mean * mean, 0.0) * n / (n - 1)
        return np.sqrt(var / n)

    def within_budget(self, P: float, z: float = 3.0) -> bool:
        """True when the mean power does not exceed P beyond z standard errors."""
        return self.mean_power <= P + z * self.stderr
