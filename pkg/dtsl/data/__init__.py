"""DTSL - Synthetic data"""

from .synthetic import SyntheticSample, DatasetSplit, generate, split, stack_batch

__all__ = ['SyntheticSample', 'DatasetSplit', 'generate', 'split', 'stack_batch']
