"""
orojar-lab Package
Main package initialization
"""
__version__ = "0.1.0"

from .config import ConfigurationManager, ConfigurationError, ExperimentConfig, PenaltyConfig
from .utils import substitute_env_vars
from .tensor import Tensor, backward, forward_op, grad, no_grad, precision
from .gradcheck import gradient_check
from .data_factory import FactorSpec, FactorSample, render, sample_batch
from .models import Generator, Discriminator, first_layer_variant
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .regularizers import (
    hessian_offdiag_probe,
    hessian_penalty_stochastic,
    jacobian_column,
    orojar_exact,
    orojar_stochastic,
)
from .sefa import SvdFactorization, sefa_directions, traverse_direction, verify_proposition
from .discovery import DirectionMatrix, discover, edit, orthonormalize
from .training import TrainLog, d_step, g_step, train
from .metrics import MetricsReport, activeness, path_length, vp_score
from .commands import CommandHandler

__all__ = [
    '__version__',
    'ConfigurationManager',
    'ConfigurationError',
    'ExperimentConfig',
    'PenaltyConfig',
    'substitute_env_vars',
    'Tensor',
    'backward',
    'forward_op',
    'grad',
    'no_grad',
    'precision',
    'gradient_check',
    'FactorSpec',
    'FactorSample',
    'render',
    'sample_batch',
    'Generator',
    'Discriminator',
    'first_layer_variant',
    'Checkpoint',
    'load_checkpoint',
    'save_checkpoint',
    'jacobian_column',
    'orojar_exact',
    'orojar_stochastic',
    'hessian_penalty_stochastic',
    'hessian_offdiag_probe',
    'SvdFactorization',
    'sefa_directions',
    'verify_proposition',
    'traverse_direction',
    'DirectionMatrix',
    'orthonormalize',
    'discover',
    'edit',
    'TrainLog',
    'd_step',
    'g_step',
    'train',
    'MetricsReport',
    'vp_score',
    'activeness',
    'path_length',
    'CommandHandler',
]
