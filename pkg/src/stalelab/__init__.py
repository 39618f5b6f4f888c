"""stalelab: a deterministic lab for staleness-aware outer optimization.

Workers run local AdamW phases and ship parameter deltas through seeded
integer-delay queues; a family of outer optimizers (gated Adam variants
and Nesterov baselines) applies them to the global parameters. The gate
module holds the cosine-cutoff/exponential-decay weighting, the theory
module checks its guarantees numerically, and the harness runs seeded
sweeps to byte-identical result files.
"""

from .config import ConfigError, RunConfig, config_hash, expand_sweep, load_run_config
from .gate import StalenessGate, cosine_gate, effective_age, gate_curve, staleness_weight
from .objective import (
    MlpRegressionObjective,
    Objective,
    QuadraticObjective,
    RosenbrockObjective,
    Shard,
    finite_diff_check,
    loss_and_grad,
    make_objective,
    sample_batch,
)
from .optim import (
    AdamMoments,
    DelayBuffer,
    InnerConfig,
    NesterovVelocity,
    OuterConfig,
    cgad_step,
    eager_step,
    inner_adamw_step,
    mla_step,
    nesterov_step,
    outer_step,
    poly_decay_step,
    sdm_step,
)
from .simulator import (
    DelaySchedule,
    FragmentPartition,
    QueueEntry,
    RunResult,
    Simulation,
    WorkerState,
    dequantize_payload,
    quantize_payload,
    run_experiment,
    run_inner_phase,
    sample_delay,
    select_fragments,
)
from .theory import TheoryInputs, audit_run, bound_terms, max_tau_sigma

__version__ = "0.1.0"
