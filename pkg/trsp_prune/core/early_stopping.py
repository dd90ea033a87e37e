"""
Early stopping on a monitored loss.
"""

import logging
from dataclasses import dataclass
from typing import Optional

logger = logging.getLogger(__name__)


@dataclass
class EarlyStopConfig:
    """
    Early stopping configuration.

    Attributes:
        threshold: Consecutive evaluations without sufficient improvement before stopping
        min_delta: Smallest decrease of the monitored value that counts as improvement
    """

    threshold: int = 5
    min_delta: float = 1e-4


class EarlyStopping:
    """
    Tracks a monitored value and reports when training should stop.
    """

    def __init__(self, config: Optional[EarlyStopConfig] = None):
        self.config = config or EarlyStopConfig()
        if self.config.threshold < 1:
            raise ValueError("early stop threshold must be at least 1")
        self.best: Optional[float] = None
        self.bad_evaluations = 0
        self.evaluations = 0
        self.stopped = False

    def update(self, value: float) -> bool:
        """
        Record one evaluation.

        Args:
            value: Monitored value (lower is better)

        Returns:
            True once ``threshold`` consecutive evaluations improved by less than ``min_delta``
        """
        self.evaluations += 1
        if self.best is None or self.best - value >= self.config.min_delta:
            self.best = value
            self.bad_evaluations = 0
        else:
            self.bad_evaluations += 1

        if self.bad_evaluations >= self.config.threshold:
            if not self.stopped:
                logger.info(
                    "Early stop after %d evaluations (best %.6f)", self.evaluations, self.best
                )
            self.stopped = True
        return self.stopped
