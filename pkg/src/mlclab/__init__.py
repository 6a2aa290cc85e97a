"""mlclab: a desk-scale laboratory for multi-label contrastive losses.

Exact loss values and analytic gradients for a zoo of contrastive and logit
losses, a finite-difference oracle that keeps them honest, synthetic
long-tailed data, a deterministic two-stage training harness, and the usual
multi-label metrics.
"""

from .datamodel import (
    ContrastiveBatch,
    MultiLabelDataset,
    generate_longtail,
    jaccard,
    overlap_ratio,
    positive_sets,
    read_dataset,
    write_dataset,
)
from .errors import (
    ConfigError,
    DomainError,
    OracleError,
    ParseError,
    TrainingDivergence,
)
from .evaluation import (
    MetricsReport,
    alignment,
    hamming,
    macro_f1,
    mean_average_precision,
    micro_f1,
    uniformity,
)
from .losses import (
    CONTRASTIVE_LOSS_IDS,
    LOGIT_LOSS_IDS,
    LOSS_IDS,
    GradientBundle,
    LossConfig,
    PairStructure,
    contrastive_loss,
    generalized_contrastive,
    logit_loss,
    loss_asymmetric,
    loss_base,
    loss_bce,
    loss_msc,
    loss_mulsupcon,
    loss_proto,
    loss_reg,
    loss_reg_matrix_value,
    loss_supcon,
    loss_supcon_reg,
    loss_zlpr,
    prr,
    reg_term,
)
from .numerics import (
    MaskedSoftmaxResult,
    finite_difference_gradient,
    masked_log_softmax,
    tempered_cosine_matrix,
)
from .training import (
    Encoder,
    ProjectionHead,
    TrainConfig,
    TrainedModel,
    clip_gradient,
    linear_eval,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    train_contrastive,
    train_model,
)
from .verification import (
    GradCheckReport,
    check_gradients,
    gate_report,
    minimum_residual,
)

__version__ = "0.1.0"
