"""lhsforge: gradient-descent construction of local hidden-state models.

Builds optimal LHS models for bipartite qudit states under sampled
measurement classes and sweeps the visibility parameter to bracket critical
steerability thresholds.
"""

from .errors import (
    CapacityError,
    DegenerateParameterError,
    LhsForgeError,
    NoBracketError,
    ShapeError,
    TrainingAbort,
    ValidationError,
)
from .lhs_model import (
    HiddenStateParam,
    HiddenVariable,
    LhsModel,
    ModelConfig,
    hidden_state,
    init_model,
    lhs_assemblage,
    load_checkpoint,
    response_probs,
    save_checkpoint,
)
from .measurements import (
    Measurement,
    MeasurementBatch,
    MeasurementClass,
    bloch_pvm,
    gellmann_coeffs,
    pauli_triple,
    sample_batch,
    sample_povm,
    sample_qubit_pvm,
    sample_qudit_pvm,
)
from .quantum_core import (
    GellMannBasis,
    assemblage_distance,
    gellmann_basis,
    partial_trace_a,
    partial_trace_b,
    quantum_assemblage,
    trace_distance,
)
from .response_basis import FeatureMap, monomial_features, odd_harmonics
from .states import VisibilityState, isotropic3, load_state, save_state, werner
from .sweep_cli import (
    SweepConfig,
    SweepRecord,
    ThresholdEstimate,
    estimate_threshold,
    run_sweep,
)
from .trainer import TrainConfig, TrainReport, batch_loss, certify, compute_gradients, train

__version__ = "0.1.0"
