"""Neural collaborative autoencoder for explicit rating prediction and
implicit top-M recommendation."""
from importlib.resources import files

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    ConfidenceVector,
    InteractionMatrix,
    SparseVector,
    Split,
    SplitSpec,
    augment,
    binarize,
    compute_confidence,
    load_ratings,
    split,
    write_ratings,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    DataError,
    DimensionError,
    EvalError,
    NCAEError,
    NumericError,
    ParseError,
    UnknownUserError,
)
from .evaluation import (
    EvalReport,
    evaluate_leave_one_out,
    evaluate_rmse,
    hr_ndcg_at_m,
    leave_one_out,
    popularity_baseline,
    rank_items,
    rmse,
)
from .model import (
    ModelParams,
    TrainConfig,
    backward,
    corrupt,
    explicit_loss,
    implicit_loss,
    predict_dense,
    sparse_forward,
    train_epoch,
)
from .pretrain import PretrainPlan, fine_tune, pretrain
from .pipeline import RunConfig, run_train

__version__ = "0.1.0"


def fixture_path(name: str = "synthetic_explicit.tsv"):
    """Path of a bundled example dataset."""
    return files(__name__) / "fixtures" / name
