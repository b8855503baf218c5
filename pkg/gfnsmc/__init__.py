"""
gfnsmc
Amortised sequential samplers trained with SMC and importance-weighted replay
"""
import logging

from gfnsmc.config import TrainConfig, load_config
from gfnsmc.trainer import (
    Trainer,
    train_combined,
    train_iw_replay,
    train_iwt,
    train_smc,
)

__version__ = "0.1.0"

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "Trainer",
    "load_config",
    "train_iwt",
    "train_smc",
    "train_iw_replay",
    "train_combined",
]
