"""JCDNet: weakly supervised temporal action localization for conjoint actions.

The package is layered bottom-up:

* :mod:`jcdnet.autograd`, :mod:`jcdnet.optim`, :mod:`jcdnet.gradcheck` and
  :mod:`jcdnet.rng` are the numerical core (tensors with reverse-mode
  gradients, Adam, finite-difference checks, a seedable generator);
* :mod:`jcdnet.model` and :mod:`jcdnet.losses` define the network and its
  training objectives;
* :mod:`jcdnet.inference` and :mod:`jcdnet.evaluation` turn outputs into
  scored segments and mAP;
* :mod:`jcdnet.data`, :mod:`jcdnet.synth`, :mod:`jcdnet.checkpoint`,
  :mod:`jcdnet.config`, :mod:`jcdnet.train` and :mod:`jcdnet.cli` handle
  files, synthetic data, configuration, the training loop and the commands.
"""

from .autograd import Tensor
from .config import EXPERIMENTS, RunConfig, experiment_flags, synthetic_run_config
from .data import Dataset, load_dataset
from .evaluation import map_report
from .inference import InferenceConfig, Proposal, localize
from .losses import AblationFlags, LossWeights, total_loss
from .model import ModelConfig, ModelOutputs, forward, init_params
from .rng import Xoshiro256
from .synth import SynthConfig, synth_generate
from .train import evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "Dataset", "EXPERIMENTS", "InferenceConfig", "LossWeights", "ModelConfig",
    "ModelOutputs", "Proposal", "RunConfig", "SynthConfig", "Tensor", "Xoshiro256", "evaluate",
    "experiment_flags", "forward", "init_params", "load_dataset", "localize", "map_report",
    "synth_generate", "synthetic_run_config", "total_loss", "train",
]
