from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from meta_prompting.params import ParamSet


@dataclass
class AdaptationTrace:
    """
    What happened during one inner loop. Entry k of each list is measured at
    the parameters after k steps, so every list has steps + 1 entries.
    """

    support_losses: list[float] = field(default_factory=list)
    query_losses: list[float] = field(default_factory=list)
    query_accuracies: list[Optional[float]] = field(default_factory=list)
    adapted: Optional[ParamSet] = None

    @property
    def steps(self) -> int:
        return max(len(self.support_losses) - 1, 0)

    @property
    def final_query_loss(self) -> Optional[float]:
        return self.query_losses[-1] if self.query_losses else None

    @property
    def final_query_accuracy(self) -> Optional[float]:
        return self.query_accuracies[-1] if self.query_accuracies else None

    def curve(self) -> np.ndarray:
        """(steps + 1, 2) array of query loss and accuracy per step (NaN where untracked)."""
        acc = [np.nan if a is None else a for a in self.query_accuracies]
        return np.column_stack([np.asarray(self.query_losses, dtype=float), np.asarray(acc, dtype=float)])
