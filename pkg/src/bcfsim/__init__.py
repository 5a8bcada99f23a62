"""Link-level simulation of feedback codes on the Gaussian broadcast channel.

Implements linear analytical schemes (the two-user LMMSE refinement code and
its two-sample variant, the control-theoretic state-space code, and a
spreading-based cancellation code), a deterministic Monte Carlo harness with
block-error statistics and power audits, and capacity/BLER predictions that
the simulations are checked against.
"""

from .channel import (
    ChannelConfig,
    PowerAudit,
    TrialTape,
    db_to_linear,
    derive_stream,
    derive_trial_rng,
    draw_tape,
    feedback_noise_from_db,
    feedback_step,
    forward_step,
    linear_to_db,
)
from .modulation import (
    MessageChunks,
    PamConstellation,
    chunk,
    demap,
    make_constellation,
    map_message,
)
from .solvers import SolverError

from .bmcl import BmclCode, bler_prediction, optimize_gamma, sum_capacity
from .harness import (
    RunSpec,
    SimResult,
    SweepSpec,
    emit_csv,
    emit_plotdata,
    run_monte_carlo,
    run_paired,
    sweep,
    wilson_interval,
)
from .lqg import LqgCode, lqg_symmetric_rate
from .ol import OlCode, SkCode
from .schemes import TddCode, UncodedCode, make_code

__version__ = "0.1.0"

__all__ = [
    "BmclCode",
    "ChannelConfig",
    "LqgCode",
    "MessageChunks",
    "OlCode",
    "PamConstellation",
    "PowerAudit",
    "RunSpec",
    "SimResult",
    "SkCode",
    "SolverError",
    "SweepSpec",
    "TddCode",
    "TrialTape",
    "UncodedCode",
    "bler_prediction",
    "chunk",
    "db_to_linear",
    "demap",
    "derive_stream",
    "derive_trial_rng",
    "draw_tape",
    "emit_csv",
    "emit_plotdata",
    "feedback_noise_from_db",
    "feedback_step",
    "forward_step",
    "linear_to_db",
    "lqg_symmetric_rate",
    "make_code",
    "make_constellation",
    "map_message",
    "optimize_gamma",
    "run_monte_carlo",
    "run_paired",
    "sum_capacity",
    "sweep",
    "wilson_interval",
    "__version__",
]
