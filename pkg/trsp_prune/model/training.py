"""
Language-model pretraining of the dense baseline.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from ..core import ops
from ..core.early_stopping import EarlyStopConfig, EarlyStopping
from ..core.errors import DataError
from ..core.optim import Adam
from ..core.runlog import RunLog
from ..core.tensor import Tape
from ..data.corpus import Corpus, random_windows
from .transformer import ModelState, forward

logger = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    """
    Pretraining settings.

    Attributes:
        steps: Maximum optimisation steps
        lr: Adam learning rate
        batch_size: Sequences per step
        seq_len: Tokens per sequence (capped at the model context)
        eval_interval: Steps between validation evaluations
        eval_windows: Validation windows per evaluation
        early_stop_threshold: Evaluations without improvement before stopping
        min_delta: Minimum validation loss improvement
    """

    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 16
    seq_len: int = 128
    eval_interval: int = 100
    eval_windows: int = 32
    early_stop_threshold: int = 5
    min_delta: float = 1e-4


@dataclass
class CurvePoint:
    step: int
    train_loss: float
    val_loss: float


@dataclass
class PretrainResult:
    state: ModelState
    curve: List[CurvePoint] = field(default_factory=list)
    steps_run: int = 0
    stopped_early: bool = False


def evaluation_windows(tokens: np.ndarray, seq_len: int, max_windows: int) -> np.ndarray:
    """Leading non-overlapping windows of ``tokens``."""
    count = min(max_windows, tokens.size // seq_len)
    if count < 1:
        raise DataError(f"Split of {tokens.size} tokens is shorter than one {seq_len}-token window")
    return tokens[: count * seq_len].reshape(count, seq_len)


def mean_loss(state: ModelState, windows: np.ndarray, batch_size: int = 16) -> float:
    """Mean next-token NLL over ``windows`` without recording gradients."""
    total, count = 0.0, 0
    for start in range(0, windows.shape[0], batch_size):
        batch = windows[start : start + batch_size]
        nll = ops.token_nll(forward(state, batch).logits.data, batch)
        total += float(nll.sum())
        count += nll.size
    return total / count


def pretrain(
    state: ModelState,
    corpus: Corpus,
    config: Optional[PretrainConfig] = None,
    seed: int = 0,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> PretrainResult:
    """
    Train the dense model with the language-modeling loss.

    Gates stay at their current value; only the weights are optimised. Training stops early
    when the validation loss improves by less than ``min_delta`` for ``early_stop_threshold``
    consecutive evaluations.

    Raises:
        DataError: If the train split is shorter than one sequence
    """
    config = config or PretrainConfig()
    seq_len = min(config.seq_len, state.config.max_seq_len)
    if corpus.train.size < seq_len:
        raise DataError(
            f"Train split has {corpus.train.size} tokens, shorter than one {seq_len}-token sequence"
        )
    result = PretrainResult(state=state)
    if config.steps <= 0:
        return result

    val_windows = evaluation_windows(corpus.validation, seq_len, config.eval_windows)
    rng = np.random.default_rng(seed)
    optimizer = Adam(state.weight_parameters(), lr=config.lr)
    stopper = EarlyStopping(EarlyStopConfig(config.early_stop_threshold, config.min_delta))
    if run_log is not None:
        run_log.record("stage_start", "pretrain", steps=config.steps, lr=config.lr)

    recent: List[float] = []
    bar = tqdm(range(1, config.steps + 1), desc="pretrain", disable=not progress, leave=False)
    for step in bar:
        batch = random_windows(corpus.train, config.batch_size, seq_len, rng)
        with Tape() as tape:
            loss = ops.cross_entropy(forward(state, batch).logits, batch)
        tape.backward(loss)
        state.gates.zero_grad()
        optimizer.step()
        recent.append(loss.item())
        result.steps_run = step

        if step % config.eval_interval == 0:
            point = CurvePoint(step, float(np.mean(recent)), mean_loss(state, val_windows))
            result.curve.append(point)
            recent.clear()
            bar.set_postfix(train=f"{point.train_loss:.4f}", val=f"{point.val_loss:.4f}")
            logger.info("step %d train %.4f val %.4f", step, point.train_loss, point.val_loss)
            if stopper.update(point.val_loss):
                result.stopped_early = True
                if run_log is not None:
                    run_log.record("early_stop", "pretrain", step=step, best=stopper.best)
                break

    if run_log is not None:
        run_log.record(
            "stage_end",
            "pretrain",
            steps_run=result.steps_run,
            final_val_loss=result.curve[-1].val_loss if result.curve else None,
        )
    return result
