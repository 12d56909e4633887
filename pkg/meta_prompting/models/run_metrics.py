import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from meta_prompting.models.exceptions import ContractError


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    improved: bool


@dataclass(frozen=True)
class EpisodeRecord:
    """One test episode after adaptation."""

    episode: int
    query_loss: float
    accuracy: float


def episode_stream_id(episode_ids: Iterable[Sequence[int]]) -> str:
    """Fingerprint of an episode stream (support + query example ids, in order)."""
    digest = hashlib.sha256()
    for ids in episode_ids:
        digest.update(",".join(str(int(i)) for i in ids).encode("ascii"))
        digest.update(b";")
    return digest.hexdigest()


@dataclass
class RunMetrics:
    """
    Everything one run reports: the training history (if it trained), the
    per-episode test results and the adaptation curve averaged over the test
    episodes. ``run_accuracies`` holds one mean test accuracy per seed once
    runs are merged with ``aggregate``.
    """

    epochs: list[EpochRecord] = field(default_factory=list)
    test_episodes: list[EpisodeRecord] = field(default_factory=list)
    curve: Optional[np.ndarray] = None
    run_accuracies: list[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stream_id: Optional[str] = None

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def val_accuracies(self) -> list[float]:
        return [e.val_accuracy for e in self.epochs]

    @property
    def test_accuracy(self) -> Optional[float]:
        if not self.test_episodes:
            return None
        return float(np.mean([e.accuracy for e in self.test_episodes]))

    @property
    def test_loss(self) -> Optional[float]:
        if not self.test_episodes:
            return None
        return float(np.mean([e.query_loss for e in self.test_episodes]))

    @property
    def test_accuracy_mean(self) -> Optional[float]:
        runs = self.run_accuracies or ([] if self.test_accuracy is None else [self.test_accuracy])
        return float(np.mean(runs)) if runs else None

    @property
    def test_accuracy_std(self) -> Optional[float]:
        runs = self.run_accuracies or ([] if self.test_accuracy is None else [self.test_accuracy])
        return float(np.std(runs)) if runs else None

    @property
    def adaptation_steps(self) -> int:
        return 0 if self.curve is None else self.curve.shape[0] - 1

    def with_test(self, test: "RunMetrics") -> "RunMetrics":
        """Training history of this run joined with the test results of ``test``."""
        return RunMetrics(
            epochs=list(self.epochs),
            test_episodes=list(test.test_episodes),
            curve=test.curve,
            run_accuracies=list(test.run_accuracies),
            best_epoch=self.best_epoch,
            stream_id=test.stream_id,
        )

    @classmethod
    def aggregate(cls, runs: Sequence["RunMetrics"]) -> "RunMetrics":
        """
        Merge per-seed runs: test accuracy mean and std are taken over the
        runs, the curve is the mean curve. Episode rows and training history
        of the first run are kept for reference.
        """
        if not runs:
            raise ContractError("nothing to aggregate")
        curves = [r.curve for r in runs if r.curve is not None]
        if curves and len({c.shape for c in curves}) != 1:
            raise ContractError("runs have adaptation curves of different lengths")
        return cls(
            epochs=list(runs[0].epochs),
            test_episodes=list(runs[0].test_episodes),
            curve=np.mean(np.stack(curves), axis=0) if curves else None,
            run_accuracies=[r.test_accuracy for r in runs if r.test_accuracy is not None],
            best_epoch=runs[0].best_epoch,
            stream_id=runs[0].stream_id if len({r.stream_id for r in runs}) == 1 else None,
        )

    def summary(self) -> dict:
        return {
            "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_accuracy": max(self.val_accuracies) if self.epochs else None,
            "test_episodes": len(self.test_episodes),
            "test_accuracy": self.test_accuracy,
            "test_loss": self.test_loss,
            "test_accuracy_mean": self.test_accuracy_mean,
            "test_accuracy_std": self.test_accuracy_std,
            "run_accuracies": list(self.run_accuracies),
            "adaptation_steps": self.adaptation_steps,
            "episode_stream": self.stream_id,
        }
