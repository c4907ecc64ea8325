"""Foreground-guided, texture-focused person re-identification on a numpy autodiff core."""

from .cfa import CFA, CfaConfig
from .data import SyntheticSpec, generate_dataset, load_dataset, synthesize
from .decoder import DecoderConfig, TFDecoder
from .losses import LossWeights, gradient_loss, hard_triplet, l1_loss, total_loss
from .masks import ReconStrategy, gaussian_mask
from .metrics import RetrievalResult, ap_oracle, evaluate
from .model import FTN, FtnConfig, embed
from .tensor import Tensor, no_grad
from .train import TrainSchedule, desk_schedule, train, train_step

__version__ = "0.1.0"
