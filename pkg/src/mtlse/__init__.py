"""Single-channel speech enhancement with learned time-frequency targets.

numpy/scipy implementation of the signal chain (STFT, synthetic reverberant
noisy scenes, oracle targets), a small MLP trainer with single- and
multi-task losses, reconstruction strategies, and fwSSNR/segSNR scoring.
"""

from .features import FeatureConfig, SppParams, TargetKind
from .stft import StftConfig, istft, stft

__version__ = "0.1.0"

__all__ = ["FeatureConfig", "SppParams", "StftConfig", "TargetKind", "istft", "stft", "__version__"]
