"""Adversarial training with sliced-Wasserstein alignment and trajectory-guided
Jacobian regularization, on small MLPs with a self-contained autodiff tape."""
from .attacks import AttackConfig, AttackSpec, fgsm, mim, pgd, run_attack
from .autodiff import ContractError, Graph, NumericError, Tensor, gradcheck
from .checkpoint import checkpoint_load, checkpoint_save
from .data import Dataset, gen_blobs, gen_two_moons, load_idx, subset
from .models import MLPSpec, Params, forward, init, predict
from .training import LossSpec, TrainConfig, train
from .transport import sample_projections, sinkhorn, sliced_w1, trajectories

__version__ = "0.1.0"
