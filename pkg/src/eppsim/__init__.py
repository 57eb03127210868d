"""Entanglement purification under memory decoherence and classical latency."""

from .decoherence import (
    MEMORY_PRESETS,
    IntegratorConfig,
    MemoryParams,
    convergence_report,
    evolve,
    fidelity_decay_curve,
    lindblad_rhs,
)
from .experiments import (
    EpcResult,
    FidelityGrid,
    RateCurve,
    Trajectory,
    distillable_rate_sweep,
    expected_pair_consumption,
    fidelity_vs_budget_grid,
    iso_contour,
    run_trajectory,
)
from .network import (
    LatencyDistribution,
    LinkConfig,
    load_latency_csv,
    pair_rate,
    sample_latency,
)
from .purification import (
    DejmpsVariant,
    Protocol,
    RoundOutcome,
    TwirlMode,
    analytic_bbpssw,
    bbpssw_round,
    deterministic_twirl,
    dejmps_round,
    haar_twirl,
    protocol_delta,
)
from .quantum import (
    bell_state,
    embed_pair_pair,
    haar_unitary,
    random_state_with_fidelity,
    singlet_fidelity,
    uhlmann_fidelity,
    werner_state,
)

__version__ = "0.1.0"
