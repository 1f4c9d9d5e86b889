"""DTSL - Segmentation networks"""

from .network import (ArchitectureKind, ModelParams, PlainConvNet, ResidualConvNet,
                      create_network, init_params, forward, predict_probs)
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = ['ArchitectureKind', 'ModelParams', 'PlainConvNet', 'ResidualConvNet',
           'create_network', 'init_params', 'forward', 'predict_probs',
           'save_checkpoint', 'load_checkpoint']
