"""diffctrl: density control of driftless systems by reversing a noising process.

A target particle cloud is noised by a reflected forward SDE; a feedback
policy is then trained so the control system, run as the reverse process,
transports the noise density back onto the target. A grid-PDE suite verifies
the underlying exact-tracking identity numerically.
"""

from .core import (
    BoxDomain,
    Ensemble,
    GaussianSpec,
    InitialSpec,
    KernelConfig,
    kernel_eval,
    make_rng,
    sample_gaussian,
    sample_initial,
    sample_uniform,
)
from .divergence import BlobKlReport, default_bandwidth, kl_blob, moment_diff, wasserstein2_exact
from .forward import DriftSpec, ForwardTrace, default_times, load_trace, reflect, save_trace, simulate_forward
from .policy import (
    AdamState,
    MlpPolicy,
    adam_step,
    constant_policy,
    init_policy,
    load_policy,
    param_count,
    policy_eval,
    policy_eval_batch,
    policy_vjp,
    policy_vjp_batch,
    save_policy,
)
from .reverse import ReverseTrace, TrainConfig, TrainHistory, cost, cost_grad, evaluate, rollout, train
from .systems import (
    ControlAffineSystem,
    SmoothField,
    bracket_field,
    chained_5d,
    chow_rashevsky_rank,
    drift_eval,
    get_system,
    lie_bracket,
    register_system,
    single_integrator,
    unicycle,
)

__version__ = "0.1.0"
