"""
Two-stage regularization-based layer selection.

Stage 1 learns one gate per layer under an L1 penalty and greedily masks the layer whose gate
ends up smallest, repeating until the prune set is full. Stage 2 un-masks the selected
layers and penalises the input/output difference of the selected layers so that they approach the
identity before they are removed.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..core import ops
from ..core.early_stopping import EarlyStopConfig, EarlyStopping
from ..core.enums import GateCriterion, NormType
from ..core.errors import ConfigError, DataError
from ..core.optim import Adam
from ..core.runlog import RunLog
from ..core.tensor import Tape, Tensor
from ..data.corpus import CalibrationSet
from ..model.transformer import ModelState, forward, mask_layer, unmask_layer

logger = logging.getLogger(__name__)


class SelectionError(ConfigError):
    """Raised when a layer selection request cannot be satisfied."""


@dataclass
class PruneSet:
    """
    Original indices of the layers selected for removal, in selection order.

    Attributes:
        indices: Original layer indices
        iterations: Selection iteration that produced each index
        strategy: Name of the strategy that built the set
    """

    indices: List[int]
    iterations: List[int] = field(default_factory=list)
    strategy: str = "trsp"

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        if not self.iterations:
            self.iterations = list(range(len(self.indices)))
        if len(set(self.indices)) != len(self.indices):
            raise SelectionError(f"Prune set has duplicate indices: {self.indices}")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, layer: object) -> bool:
        return layer in self.indices

    def to_dict(self) -> dict:
        return {"indices": self.indices, "iterations": self.iterations, "strategy": self.strategy}


@dataclass
class Stage1Config:
    """
    Gate learning settings.

    Attributes:
        lambda1: Weight of the L1 penalty on the gates of unmasked layers
        steps: Optimisation steps per selection iteration
        lr: Learning rate of the model weights (joint mode)
        gate_lr: Learning rate of the gates
        batch_size: Calibration sequences per step
        joint_weights: Update the model weights together with the gates
        reinit_gates: Reset surviving gates to 1 at the start of every iteration
        criterion: Compare gate magnitudes or raw gate values when selecting
        eval_interval: Steps averaged per early-stopping evaluation
        early_stop_threshold: Evaluations without improvement before stopping
        min_delta: Minimum improvement of the averaged loss
    """

    lambda1: float = 5e-3
    steps: int = 200
    lr: float = 2e-5
    gate_lr: float = 1e-2
    batch_size: int = 8
    joint_weights: bool = True
    reinit_gates: bool = False
    criterion: GateCriterion = GateCriterion.MAGNITUDE
    eval_interval: int = 20
    early_stop_threshold: int = 5
    min_delta: float = 1e-4

    def __post_init__(self):
        if isinstance(self.criterion, str):
            self.criterion = GateCriterion(self.criterion)
        if self.lambda1 < 0:
            raise ConfigError(f"stage1.lambda1 must be non-negative, got {self.lambda1}")
        if self.steps < 1:
            raise ConfigError(f"stage1.steps must be at least 1, got {self.steps}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["criterion"] = self.criterion.value
        return data


@dataclass
class Stage2Config:
    """
    Input/output difference regularization settings.

    Attributes:
        lambda2: Weight of the difference penalty
        norm: Norm of the difference (L1 or L2)
        steps: Optimisation steps
        lr: Learning rate of all trainable parameters
        batch_size: Calibration sequences per step
        eval_interval: Steps averaged per early-stopping evaluation
        early_stop_threshold: Evaluations without improvement before stopping
        min_delta: Minimum improvement of the averaged loss
    """

    lambda2: float = 1e-3
    norm: NormType = NormType.L2
    steps: int = 500
    lr: float = 2e-5
    batch_size: int = 8
    eval_interval: int = 20
    early_stop_threshold: int = 5
    min_delta: float = 1e-4

    def __post_init__(self):
        if isinstance(self.norm, str):
            self.norm = NormType(self.norm)
        if self.lambda2 < 0:
            raise ConfigError(f"stage2.lambda2 must be non-negative, got {self.lambda2}")
        if self.steps < 1:
            raise ConfigError(f"stage2.steps must be at least 1, got {self.steps}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["norm"] = self.norm.value
        return data


@dataclass
class SelectionRecord:
    iteration: int
    gates: Dict[int, float]
    chosen: int
    gate_value: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "gates": {str(k): v for k, v in sorted(self.gates.items())},
            "chosen": self.chosen,
            "gate_value": self.gate_value,
        }


@dataclass
class SelectionHistory:
    """One record per pruned layer."""

    records: List[SelectionRecord] = field(default_factory=list)

    def to_list(self) -> List[dict]:
        return [r.to_dict() for r in self.records]


@dataclass
class LearnResult:
    """
    Outcome of one gate-learning pass.

    Attributes:
        gates: Gate value per original layer index after learning
        losses: Total loss per step
        lm_losses: Language-modeling part per step
        penalties: Unweighted L1 penalty per step
        steps_run: Steps executed before early stopping
    """

    gates: Dict[int, float]
    losses: List[float] = field(default_factory=list)
    lm_losses: List[float] = field(default_factory=list)
    penalties: List[float] = field(default_factory=list)
    steps_run: int = 0


@dataclass
class Stage2Result:
    """
    Outcome of the difference regularization.

    Attributes:
        penalties: Unweighted difference penalty per step
        lm_losses: Language-modeling loss per step
        losses: Total loss per step
        initial_penalty: Penalty over the whole calibration set before the first step
        final_penalty: Penalty over the whole calibration set after the last step
        steps_run: Steps executed before early stopping
    """

    penalties: List[float] = field(default_factory=list)
    lm_losses: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    initial_penalty: float = 0.0
    final_penalty: float = 0.0
    steps_run: int = 0


def _require_calibration(calib: CalibrationSet) -> None:
    if calib.n_sequences < 1:
        raise DataError("Calibration set is empty")


def stage1_loss(
    state: ModelState, batch: np.ndarray, lambda1: float
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    ``L(W, X) + lambda1 * sum |S[i]|`` over unmasked layers.

    Returns:
        (total, language-modeling loss, unweighted penalty)
    """
    lm = ops.cross_entropy(forward(state, batch).logits, batch)
    positions = [state.position_of(i) for i in state.active_layers]
    penalty = ops.l1_sum(ops.gather(state.gates, positions))
    return ops.add(lm, ops.scale(penalty, lambda1)), lm, penalty


def learn_layer_weights(
    state: ModelState,
    calib: CalibrationSet,
    config: Stage1Config,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> LearnResult:
    """
    Learn the gates of the unmasked layers (and the weights in joint mode).

    Masked layers' gates are frozen: their entries receive neither gradient nor momentum.

    Raises:
        SelectionError: If every layer is masked
        DataError: If the calibration set is empty
    """
    active = state.active_layers
    if not active:
        raise SelectionError("Cannot learn layer weights: all layers are masked")
    _require_calibration(calib)
    if config.reinit_gates:
        state.reset_gates(active)

    optimizer = Adam(betas=(0.9, 0.999))
    optimizer.add_param_group([state.gates], config.gate_lr)
    if config.joint_weights:
        optimizer.add_param_group(state.weight_parameters(), config.lr)
    frozen = np.array([lid in state.mask_set for lid in state.layer_ids])
    optimizer.freeze(state.gates, frozen)
    stopper = EarlyStopping(EarlyStopConfig(config.early_stop_threshold, config.min_delta))

    result = LearnResult(gates={})
    window: List[float] = []
    bar = tqdm(range(config.steps), desc="stage1", disable=not progress, leave=False)
    for step in bar:
        batch = calib.batch(step, config.batch_size)
        with Tape() as tape:
            total, lm, penalty = stage1_loss(state, batch, config.lambda1)
        tape.backward(total)
        optimizer.step()
        result.losses.append(total.item())
        result.lm_losses.append(lm.item())
        result.penalties.append(penalty.item())
        result.steps_run = step + 1
        window.append(total.item())
        if len(window) == config.eval_interval:
            if stopper.update(float(np.mean(window))):
                if run_log is not None:
                    run_log.record("early_stop", "stage1", step=step + 1)
                break
            window.clear()

    result.gates = {lid: state.gate(lid) for lid in active}
    logger.debug("Learned gates %s", result.gates)
    return result


def _gate_key(value: float, criterion: GateCriterion) -> float:
    return abs(value) if criterion is GateCriterion.MAGNITUDE else value


def select_min_gate(
    gates: Union[Mapping[int, float], Sequence[float]],
    mask_set: Set[int] = frozenset(),
    criterion: GateCriterion = GateCriterion.MAGNITUDE,
) -> int:
    """
    Original index of the unmasked layer with the smallest gate; ties go to the lowest index.

    Args:
        gates: Gate per original layer index (a sequence is indexed 0..l-1)
        mask_set: Layers that cannot be chosen
        criterion: Compare ``|gate|`` (default) or the raw value

    Raises:
        SelectionError: If no unmasked layer remains
    """
    items = gates.items() if isinstance(gates, Mapping) else enumerate(gates)
    candidates = [(int(i), float(g)) for i, g in items if int(i) not in mask_set]
    if not candidates:
        raise SelectionError("No unmasked layer left to select")
    return min(candidates, key=lambda item: (_gate_key(item[1], criterion), item[0]))[0]


def check_prune_count(n: int, n_layers: int) -> None:
    if not 1 <= n < n_layers:
        raise SelectionError(f"Number of layers to prune must be in [1, {n_layers - 1}], got {n}")


def _check_selectable(state: ModelState, n: int) -> None:
    check_prune_count(n, state.n_layers)
    if n > len(state.active_layers):
        raise SelectionError(
            f"Cannot select {n} layers, only {len(state.active_layers)} are unmasked"
        )


def iterative_selection(
    state: ModelState,
    calib: CalibrationSet,
    n: int,
    config: Stage1Config,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> Tuple[PruneSet, SelectionHistory]:
    """
    Greedy selection: ``n`` rounds of gate learning, each masking the least important layer.

    Gates start at 1 and, unless ``config.reinit_gates`` is set, carry over between rounds.
    The selected layers are left masked in ``state``.
    """
    _check_selectable(state, n)
    state.reset_gates()
    history = SelectionHistory()
    chosen: List[int] = []
    for iteration in range(n):
        learned = learn_layer_weights(state, calib, config, run_log, progress)
        idx = select_min_gate(learned.gates, state.mask_set, config.criterion)
        history.records.append(
            SelectionRecord(iteration, dict(learned.gates), idx, learned.gates[idx])
        )
        mask_layer(state, idx)
        chosen.append(idx)
        logger.info(
            "Iteration %d: selected layer %d (gate %.5f)", iteration, idx, learned.gates[idx]
        )
        if run_log is not None:
            run_log.record(
                "selection",
                "stage1",
                iteration=iteration,
                layer=idx,
                gate=learned.gates[idx],
                steps=learned.steps_run,
            )
    return PruneSet(chosen, list(range(n)), "trsp-iterative"), history


def one_shot_selection(
    state: ModelState,
    calib: CalibrationSet,
    n: int,
    config: Stage1Config,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> Tuple[PruneSet, SelectionHistory]:
    """A single gate-learning pass; the ``n`` smallest gates form the prune set."""
    _check_selectable(state, n)
    state.reset_gates()
    learned = learn_layer_weights(state, calib, config, run_log, progress)
    ranked = sorted(
        learned.gates.items(), key=lambda item: (_gate_key(item[1], config.criterion), item[0])
    )
    chosen = [idx for idx, _ in ranked[:n]]
    history = SelectionHistory(
        [SelectionRecord(0, dict(learned.gates), idx, learned.gates[idx]) for idx in chosen]
    )
    if run_log is not None:
        run_log.record("selection", "stage1", iteration=0, layers=chosen)
    return PruneSet(chosen, [0] * n, "trsp-one-shot"), history


def max_consecutive_run(indices: Sequence[int]) -> int:
    """Length of the longest run of adjacent layer indices."""
    ordered = sorted(set(int(i) for i in indices))
    best = run = 1 if ordered else 0
    for prev, cur in zip(ordered, ordered[1:]):
        run = run + 1 if cur == prev + 1 else 1
        best = max(best, run)
    return best


def difference_penalty(
    state: ModelState, batch: np.ndarray, layers: Sequence[int], norm: NormType
) -> Tuple[Tensor, Tensor]:
    """
    Language-modeling loss and ``sum_i ||X_out^i - X_in^i||`` over ``layers``.

    Each layer's norm is taken per (batch, position) vector and averaged.
    """
    out = forward(state, batch, trace=True, trace_layers=layers)
    lm = ops.cross_entropy(out.logits, batch)
    terms = [ops.norm_penalty(out.trace.difference(i), norm, per_vector=True) for i in layers]
    penalty = terms[0]
    for term in terms[1:]:
        penalty = ops.add(penalty, term)
    return lm, penalty


def measure_penalty(
    state: ModelState,
    layers: Sequence[int],
    calib: CalibrationSet,
    norm: NormType,
    batch_size: int = 8,
) -> float:
    """Difference penalty averaged over the whole calibration set, without gradients."""
    values, weights = [], []
    for start in range(0, calib.n_sequences, batch_size):
        batch = calib.tokens[start : start + batch_size]
        _, penalty = difference_penalty(state, batch, layers, norm)
        values.append(penalty.item())
        weights.append(batch.shape[0])
    return float(np.average(values, weights=weights))


def stage2_regularize(
    state: ModelState,
    prune_set: Union[PruneSet, Sequence[int]],
    calib: CalibrationSet,
    config: Stage2Config,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> Stage2Result:
    """
    Minimise ``L(W, X) + lambda2 * sum_{i in P} ||X_out^i - X_in^i||`` over all parameters.

    The layers in P are un-masked first so that they execute; other masked layers stay masked.
    Their gates are reset to 1 and frozen; the surviving layers' gates keep training with the
    weights.

    Raises:
        SelectionError: If the prune set is empty
    """
    layers = list(prune_set)
    if not layers:
        raise SelectionError("stage 2 needs a non-empty prune set")
    for idx in layers:
        state.position_of(idx)
    _require_calibration(calib)

    for idx in layers:
        if idx in state.mask_set:
            unmask_layer(state, idx)
    state.reset_gates(layers)
    optimizer = Adam(state.parameters(), lr=config.lr)
    frozen = np.array([lid in set(layers) for lid in state.layer_ids])
    optimizer.freeze(state.gates, frozen)
    stopper = EarlyStopping(EarlyStopConfig(config.early_stop_threshold, config.min_delta))

    result = Stage2Result()
    result.initial_penalty = measure_penalty(state, layers, calib, config.norm, config.batch_size)
    if run_log is not None:
        run_log.record(
            "stage_start", "stage2", layers=layers, initial_penalty=result.initial_penalty
        )

    window: List[float] = []
    bar = tqdm(range(config.steps), desc="stage2", disable=not progress, leave=False)
    for step in bar:
        batch = calib.batch(step, config.batch_size)
        with Tape() as tape:
            lm, penalty = difference_penalty(state, batch, layers, config.norm)
            total = ops.add(lm, ops.scale(penalty, config.lambda2))
        tape.backward(total)
        optimizer.step()
        result.penalties.append(penalty.item())
        result.lm_losses.append(lm.item())
        result.losses.append(total.item())
        result.steps_run = step + 1
        window.append(total.item())
        if len(window) == config.eval_interval:
            if stopper.update(float(np.mean(window))):
                if run_log is not None:
                    run_log.record("early_stop", "stage2", step=step + 1)
                break
            window.clear()

    result.final_penalty = measure_penalty(state, layers, calib, config.norm, config.batch_size)
    logger.info(
        "Stage 2: penalty %.5f -> %.5f over %d steps",
        result.initial_penalty,
        result.final_penalty,
        result.steps_run,
    )
    if run_log is not None:
        run_log.record(
            "stage_end", "stage2", final_penalty=result.final_penalty, steps_run=result.steps_run
        )
    return result
