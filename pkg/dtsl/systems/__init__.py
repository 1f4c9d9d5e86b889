"""DTSL - Training systems"""

from .consensus import (ClgStrategy, ConsistencyMask, kl_pixelwise, js_divergence, make_masks,
                        clg, clg_strategy, plain_consensus, triple_consensus, consistency_fraction)
from .losses import LossBreakdown, cross_entropy, dice_loss, l_sup, l_semi, l_url, l_pace, mt_decomposition_check
from .ema import EmaConfig, ema_update, make_teacher
from .optimizer import AdamOptimizer, lr_schedule
from .metrics import MetricReport, dsc, jaccard, hd95, asd
from .debugger import TrainingDebugger

__all__ = ['ClgStrategy', 'ConsistencyMask', 'kl_pixelwise', 'js_divergence', 'make_masks',
           'clg', 'clg_strategy', 'plain_consensus', 'triple_consensus', 'consistency_fraction',
           'LossBreakdown', 'cross_entropy', 'dice_loss', 'l_sup', 'l_semi', 'l_url', 'l_pace',
           'mt_decomposition_check', 'EmaConfig', 'ema_update', 'make_teacher',
           'AdamOptimizer', 'lr_schedule', 'MetricReport', 'dsc', 'jaccard', 'hd95', 'asd',
           'TrainingDebugger']
