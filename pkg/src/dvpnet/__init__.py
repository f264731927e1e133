"""Grid-cell vanishing point detection with a numpy autodiff core."""
from .codec import Detection, HeadLayout, decode, encode_targets, grids_for
from .geometry import Point2, consistency_error, d_rms
from .loss import LossWeights, total_loss
from .model import ModelConfig, build
from .synthgen import SceneConfig, generate_scene, generate_scenes
from .trainer import TrainConfig, lr_at, train

__version__ = "0.1.0"
