"""Future-frame-prediction video anomaly detection with a Conv-VRNN model.

Train on normal video, predict each next frame from the preceding ones, and
flag frames whose prediction error is large. Ships a recurrent variational
model (Conv-VRNN), a non-recurrent Conv-VAE baseline, synthetic and
directory-based dataset ingestion, per-video anomaly scoring, frame-level
ROC/AUC evaluation, and a CLI wiring it all together.
"""

from .dataio import (
    ClipWindow,
    SynthSpec,
    VideoRecord,
    load_labels,
    load_split,
    load_video,
    make_synth_dataset,
    synth_video,
    window_iter,
)
from .model import (
    MODE_EVAL,
    MODE_TRAIN,
    ConvVAE,
    ConvVRNN,
    ModelConfig,
    RecurrentState,
    StepOutput,
    build_model,
    reparameterize,
)
from .objectives import (
    LatentGaussian,
    LossConfig,
    gdl_loss,
    kl_gauss,
    l1_loss,
    msssim_loss,
    prediction_loss,
    total_objective,
)
from .scoring import EvalReport, ScoreSeries, evaluate, frame_losses, normalize_scores, roc_auc
from .trainer import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ClipWindow", "SynthSpec", "VideoRecord", "load_labels", "load_split",
    "load_video", "make_synth_dataset", "synth_video", "window_iter",
    "MODE_EVAL", "MODE_TRAIN", "ConvVAE", "ConvVRNN", "ModelConfig",
    "RecurrentState", "StepOutput", "build_model", "reparameterize",
    "LatentGaussian", "LossConfig", "gdl_loss", "kl_gauss", "l1_loss",
    "msssim_loss", "prediction_loss", "total_objective",
    "EvalReport", "ScoreSeries", "evaluate", "frame_losses",
    "normalize_scores", "roc_auc",
    "Checkpoint", "TrainConfig", "load_checkpoint", "restore_model",
    "save_checkpoint", "train",
]
