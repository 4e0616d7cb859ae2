"""gravrec: sequential recommendation with a split user state.

The user state has two halves. A conscious vector is updated by a gated
recurrent cell whenever an item is consumed. An unconscious position (with
velocity) lives in the item-embedding space and drifts under a softened
gravitational pull of the items between consumptions; consuming an item
lets the conscious state shift it instantaneously. A second gate balances
the two halves into a decision state whose distances to the item embeddings
define the recommendation distribution.

Everything trains end to end: the fixed-step integrator is unrolled onto an
operation record and differentiated exactly in reverse mode, and a
finite-difference harness verifies the gradients.
"""

from .conscious import ConsciousParams, gru_step
from .data import (
    BehaviourSequence,
    DatasetSplit,
    ItemCatalog,
    clamp_intervals,
    generate_synthetic,
    ingest_csv,
    split_sequences,
)
from .decision import (
    DecisionParams,
    RecommendationDistribution,
    decision_state,
    recommend_top_k,
    score_items,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    DataError,
    GravrecError,
    IntegrationError,
    NumericError,
)
from .evaluation import (
    MetricsTable,
    evaluate,
    fmc_baseline,
    ndcg_at_k,
    pleasure_reality_report,
    popularity_baseline,
    recall_at_k,
    whatif_sweep,
)
from .gradcheck import GradientCheckReport, finite_difference_check
from .integrate import rk4_trajectory
from .model import (
    CellConfig,
    ModelParameters,
    forward_sequence,
    init_model,
    lift_model,
    model_from_arrays,
    model_to_arrays,
    sequence_loss,
)
from .tape import Node, Tape, affine, hyperbolic_tangent, logistic, reverse_gradients
from .training import (
    AdamState,
    Checkpoint,
    EarlyStopper,
    TrainConfig,
    TrainingHistory,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
    warmup_lr,
)
from .unconscious import (
    GravityField,
    ShiftParams,
    acceleration,
    float_batch_padded,
    float_state,
    potential,
    shift_state,
)
from .verify import run_gradient_check

__version__ = "0.1.0"
