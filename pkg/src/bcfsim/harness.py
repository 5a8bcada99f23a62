"""Monte Carlo orchestration: trial batches, statistics, sweeps, CSV output.

Trials are processed in fixed-size batches; each batch owns a
counter-derived random stream keyed by (seed, grid point, batch index), so
results are identical no matter how many workers run or in what order
batches complete.  Batches for one grid point reuse the same noise tapes
across schemes when a paired comparison is requested.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig, PowerAudit, derive_stream, linear_to_db
from .schemes import Code, make_code

__all__ = [
    "SimResult",
    "RunSpec",
    "SweepSpec",
    "PowerBudgetError",
    "wilson_interval",
    "run_monte_carlo",
    "run_paired",
    "tdd_wrap",
    "sweep",
    "emit_csv",
    "emit_plotdata",
    "CSV_HEADER",
]

CSV_HEADER = "scheme,L,K,N,snr_b_db,sigma_f2_db,user,bler,ci_lo,ci_hi,errors,trials,avg_power"

_Z95 = 1.959963984540054


class PowerBudgetError(RuntimeError):
    """A simulated scheme exceeded the average power budget."""


def wilson_interval(errors: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class SimResult:
    """Per-user block-error statistics for one simulated grid point."""

    scheme: str
    L: int
    K: int
    N: int
    snr_b_db: float
    sigma_f2_db: float
    errors: np.ndarray          # (L,)
    trials: int
    bler: np.ndarray            # (L,)
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    avg_power: float
    power_se: float
    round_power: np.ndarray     # (N,)
    round_power_se: np.ndarray
    seconds: float

    @property
    def mean_bler(self) -> float:
        return float(np.mean(self.bler))

    def ci(self, user: int) -> tuple[float, float]:
        return float(self.ci_lo[user]), float(self.ci_hi[user])


@dataclass(frozen=True)
class RunSpec:
    """Execution knobs for one Monte Carlo point."""

    trials: int = 1_000_000
    min_errors: int = 100
    batch: int = 20_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError(f"trial count must be >= 1, got {self.trials}")
        if self.min_errors < 1:
            raise ValueError("min_errors must be >= 1")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")


def point_key(*parts) -> int:
    """Stable 64-bit key for a grid point, independent of grid order."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _run_batch(codes: list[Code], cfg: ChannelConfig, rng: np.random.Generator,
               batch: int):
    """Run one batch of trials on a shared tape; returns per-code counters."""
    L, N = cfg.L, cfg.N
    bits = codes[0].bits
    msgs = rng.integers(0, 1 << bits, size=(L, batch))
    n_b = rng.standard_normal((L, N, batch)) * math.sqrt(cfg.sigma_b2)
    n_f = rng.standard_normal((L, N, batch)) * math.sqrt(cfg.sigma_f2)
    out = []
    for code in codes:
        enc = code.start(msgs)
        y = np.empty((L, N, batch))
        x = np.empty((N, batch))
        for t in range(N):
            xt = np.broadcast_to(enc.transmit(t), (batch,))
            x[t] = xt
            y[:, t] = xt[None, :] + n_b[:, t]
            enc.consume(t, y[:, t] + n_f[:, t])
        decoded = code.decode(y)
        errors = (decoded != msgs).sum(axis=1)
        out.append((errors, x))
    return out


def _simulate(codes: list[Code], cfg: ChannelConfig, spec: RunSpec, key: int):
    for code in codes:
        if code.users != cfg.L or code.uses != cfg.N:
            raise ValueError(
                f"code {code.name!r} is designed for L={code.users}, N={code.uses}; "
                f"channel has L={cfg.L}, N={cfg.N}")
        if code.bits != codes[0].bits:
            raise ValueError("paired codes must share the message size")

    start = time.perf_counter()
    n_batches = (spec.trials + spec.batch - 1) // spec.batch
    sizes = [min(spec.batch, spec.trials - i * spec.batch) for i in range(n_batches)]
    errors = [np.zeros(cfg.L, dtype=np.int64) for _ in codes]
    audits = [PowerAudit(cfg.N) for _ in codes]
    trials_done = 0

    def job(i: int):
        rng = derive_stream(spec.seed, key, i)
        return _run_batch(codes, cfg, rng, sizes[i])

    def absorb(result) -> bool:
        nonlocal trials_done
        for c, (err, x) in enumerate(result):
            errors[c] += err
            audits[c].add(x)
        trials_done += result[0][1].shape[1]
        return all(int(e.min()) >= spec.min_errors for e in errors)

    if spec.workers <= 1:
        for i in range(n_batches):
            if absorb(job(i)):
                break
    else:
        # Batches are merged in index order so the stopping decision (and
        # therefore every statistic) is identical to the serial run.
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            futures = [pool.submit(job, i) for i in range(n_batches)]
            for fut in futures:
                if absorb(fut.result()):
                    for rest in futures:
                        rest.cancel()
                    break
    elapsed = time.perf_counter() - start

    results = []
    for code, err, audit in zip(codes, errors, audits):
        bler = err / trials_done
        lo = np.empty(cfg.L)
        hi = np.empty(cfg.L)
        for ell in range(cfg.L):
            lo[ell], hi[ell] = wilson_interval(int(err[ell]), trials_done)
        sigma_f2_db = linear_to_db(cfg.sigma_f2 / cfg.P)
        results.append(SimResult(
            scheme=code.name, L=cfg.L, K=code.bits, N=cfg.N,
            snr_b_db=cfg.snr_b_db, sigma_f2_db=sigma_f2_db,
            errors=err.copy(), trials=trials_done, bler=bler, ci_lo=lo, ci_hi=hi,
            avg_power=audit.mean_power, power_se=audit.stderr,
            round_power=audit.round_power(), round_power_se=audit.round_stderr(),
            seconds=elapsed))
    return results


def run_monte_carlo(code: Code, cfg: ChannelConfig, spec: RunSpec) -> SimResult:
    """Estimate per-user BLER for one code on one channel configuration."""
    key = point_key(code.name, cfg.L, code.bits, cfg.N, cfg.sigma_b2, cfg.sigma_f2)
    result = _simulate([code], cfg, spec, key)[0]
    _check_power(result, cfg)
    return result


def run_paired(codes: list[Code], cfg: ChannelConfig, spec: RunSpec) -> list[SimResult]:
    """Run several codes on identical tapes (variance-reduced comparisons)."""
    key = point_key("paired", cfg.L, codes[0].bits, cfg.N, cfg.sigma_b2, cfg.sigma_f2)
    results = _simulate(codes, cfg, spec, key)
    for r in results:
        _check_power(r, cfg)
    return results


def _check_power(result: SimResult, cfg: ChannelConfig) -> None:
    if result.avg_power > cfg.P * 1.01 and \
            result.avg_power > cfg.P + 3.0 * result.power_se:
        raise PowerBudgetError(
            f"scheme {result.scheme!r} used {result.avg_power:.4f} energy/use "
            f"against a budget of {cfg.P}")


def tdd_wrap(inner_factory, bits: int, N: int):
    """Broadcast scheme serving each user in half the uses via a 1-user code.

    ``inner_factory(n)`` must build a single-user code over ``n`` uses.
    """
    from .schemes import TddCode

    return TddCode(inner_factory, bits, N)


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian sweep over forward SNR and feedback noise grids."""

    scheme: str
    L: int
    K: int
    N: int
    snr_db: tuple[float, ...]
    fb_noise_db: tuple[float | None, ...]   # None means perfect feedback
    P: float = 1.0
    trials: int = 100_000
    min_errors: int = 100
    seed: int = 0
    batch: int = 20_000
    workers: int = 1
    g: float = 1.0
    gamma: float | None = None
    gamma_step: float = 0.01

    def __post_init__(self) -> None:
        if len(self.snr_db) == 0 or len(self.fb_noise_db) == 0:
            raise ValueError("sweep grids must be non-empty")
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")


def sweep(spec: SweepSpec, progress=None) -> list[SimResult]:
    """Evaluate the full grid; rows come back in deterministic grid order."""
    rows: list[SimResult] = []
    run = RunSpec(trials=spec.trials, min_errors=spec.min_errors,
                  batch=spec.batch, seed=spec.seed, workers=spec.workers)
    for snr_db in spec.snr_db:
        for fb_db in spec.fb_noise_db:
            sigma_b2 = spec.P / (10.0 ** (snr_db / 10.0))
            sigma_f2 = 0.0 if fb_db is None else spec.P * 10.0 ** (fb_db / 10.0)
            cfg = ChannelConfig(L=spec.L, N=spec.N, P=spec.P, sigma_b2=sigma_b2,
                                sigma_f2=sigma_f2, seed=spec.seed)
            code = make_code(spec.scheme, cfg, spec.K, g=spec.g,
                             gamma=spec.gamma, gamma_step=spec.gamma_step)
            result = run_monte_carlo(code, cfg, run)
            rows.append(result)
            if progress is not None:
                progress(result)
    return rows


def _fmt(x: float) -> str:
    if x == -math.inf:
        return "-inf"
    return f"{x:.9g}"


def result_lines(result: SimResult) -> list[str]:
    lines = []
    for ell in range(result.L):
        lines.append(",".join([
            result.scheme, str(result.L), str(result.K), str(result.N),
            _fmt(result.snr_b_db), _fmt(result.sigma_f2_db), str(ell + 1),
            _fmt(float(result.bler[ell])), _fmt(float(result.ci_lo[ell])),
            _fmt(float(result.ci_hi[ell])), str(int(result.errors[ell])),
            str(result.trials), _fmt(result.avg_power)]))
    return lines


def emit_csv(results: list[SimResult], path) -> None:
    """Write one CSV line per (grid point, user)."""
    if not results:
        raise ValueError("no results to write")
    try:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in results:
                for line in result_lines(r):
                    fh.write(line + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def emit_plotdata(results: list[SimResult], path) -> None:
    """Write per-scheme series blocks usable directly as plot input."""
    if not results:
        raise ValueError("no results to write")
    groups: dict[tuple[str, int], list[SimResult]] = {}
    for r in results:
        groups.setdefault((r.scheme, r.K), []).append(r)
    try:
        with open(path, "w") as fh:
            for (scheme, k), rows in groups.items():
                fh.write(f"# scheme={scheme} K={k}\n")
                fh.write("snr_b_db,sigma_f2_db,user,bler,ci_lo,ci_hi\n")
                for r in sorted(rows, key=lambda r: (r.snr_b_db, r.sigma_f2_db)):
                    for ell in range(r.L):
                        fh.write(",".join([
                            _fmt(r.snr_b_db), _fmt(r.sigma_f2_db), str(ell + 1),
                            _fmt(float(r.bler[ell])), _fmt(float(r.ci_lo[ell])),
                            _fmt(float(r.ci_hi[ell]))]) + "\n")
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write plot data to {path}: {exc}") from exc
