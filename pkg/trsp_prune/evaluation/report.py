"""
Evaluation reports and their JSON/CSV renderings.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from ..core.errors import ConfigError, InvariantViolation
from ..model.transformer import ModelState

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SIMILARITY_TOLERANCE = 1e-9


@dataclass
class EvalConfig:
    """
    Evaluation settings.

    Attributes:
        seq_len: Window length for perplexity (0: the model context)
        stride: Window stride (0: equal to the window, i.e. non-overlapping)
        batch_size: Windows per forward
        similarity: Record per-layer similarity traces
    """

    seq_len: int = 0
    stride: int = 0
    batch_size: int = 16
    similarity: bool = True

    def __post_init__(self):
        if self.seq_len < 0 or self.stride < 0 or self.batch_size < 1:
            raise ConfigError(
                "eval.seq_len and eval.stride must be >= 0 and eval.batch_size >= 1"
            )


def compression_summary(before: ModelState, after: ModelState) -> dict:
    """Parameter counts and the removed share of layers and parameters."""
    params_before = before.num_parameters()
    params_after = after.num_parameters()
    return {
        "layers_before": before.n_layers,
        "layers_after": after.n_layers,
        "removed_layer_share": 1.0 - after.n_layers / before.n_layers,
        "params_before": params_before,
        "params_after": params_after,
        "removed_param_share": 1.0 - params_after / params_before,
    }


@dataclass
class EvalReport:
    """
    Output record of a pruning or evaluation run.

    Similarity maps are keyed by original layer index. ``ppl`` is the perplexity of the
    evaluated (usually pruned) model; ``ppl_before`` that of the input model on the same split.
    """

    strategy: str
    ppl: float
    ppl_before: Optional[float] = None
    mode: Optional[str] = None
    regularize: bool = False
    ratio: Optional[float] = None
    n_layers_before: int = 0
    n_layers_after: int = 0
    prune_set: Optional[dict] = None
    history: List[dict] = field(default_factory=list)
    similarity_before: Dict[int, float] = field(default_factory=dict)
    similarity_after: Dict[int, float] = field(default_factory=dict)
    zero_norm_vectors: int = 0
    stage2_penalties: List[float] = field(default_factory=list)
    tokens_per_second: Optional[float] = None
    latency_ms: Optional[float] = None
    compression: dict = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    eval_split_hash: str = ""
    calibration: dict = field(default_factory=dict)

    @property
    def ppl_delta(self) -> Optional[float]:
        """Signed perplexity change relative to the input model."""
        return None if self.ppl_before is None else self.ppl - self.ppl_before

    @property
    def pruned_layers(self) -> List[int]:
        return list(self.prune_set["indices"]) if self.prune_set else []

    def validate(self) -> "EvalReport":
        """
        Raises:
            InvariantViolation: If the perplexity is below 1 or a similarity leaves [-1, 1]
        """
        for name, value in (("ppl", self.ppl), ("ppl_before", self.ppl_before)):
            if value is not None and not (math.isfinite(value) and value >= 1.0):
                raise InvariantViolation(f"{name} = {value} is not a perplexity")
        for name in ("similarity_before", "similarity_after"):
            for layer, sim in getattr(self, name).items():
                if abs(sim) > 1.0 + SIMILARITY_TOLERANCE:
                    raise InvariantViolation(f"{name}[{layer}] = {sim} outside [-1, 1]")
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        for name in ("similarity_before", "similarity_after"):
            data[name] = {str(k): v for k, v in sorted(getattr(self, name).items())}
        data["ppl_delta"] = self.ppl_delta
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in known}
        for name in ("similarity_before", "similarity_after"):
            kwargs[name] = {int(k): float(v) for k, v in kwargs.get(name, {}).items()}
        return cls(**kwargs)


def write_json(path: PathLike, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.debug("Wrote %s", path)
    return path


def read_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


def write_rows(path: PathLike, fieldnames: Sequence[str], rows: Iterable[Mapping]) -> Path:
    """Write dictionaries as CSV with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_rows(path: PathLike) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_similarity_csv(path: PathLike, report: EvalReport) -> Path:
    """One row per traced layer: ``layer, before, after, pruned``."""
    layers = sorted(set(report.similarity_before) | set(report.similarity_after))
    pruned = set(report.pruned_layers)
    rows = [
        {
            "layer": layer,
            "before": report.similarity_before.get(layer, ""),
            "after": report.similarity_after.get(layer, ""),
            "pruned": int(layer in pruned),
        }
        for layer in layers
    ]
    return write_rows(path, ["layer", "before", "after", "pruned"], rows)


def write_curve_csv(path: PathLike, curve: Sequence) -> Path:
    """Pretraining loss curve: one row per evaluation interval."""
    rows = [{"step": p.step, "train_loss": p.train_loss, "val_loss": p.val_loss} for p in curve]
    return write_rows(path, ["step", "train_loss", "val_loss"], rows)


def write_grid_csv(
    path: PathLike,
    row_values: Sequence[float],
    column_values: Sequence[float],
    matrix: Sequence[Sequence[float]],
    corner: str = "lambda1\\lambda2",
) -> Path:
    """Matrix with a header row of column values and a leading column of row values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([corner] + [repr(float(c)) for c in column_values])
        for value, row in zip(row_values, matrix):
            writer.writerow([repr(float(value))] + [repr(float(x)) for x in row])
    return path


def read_grid_csv(path: PathLike):
    """Inverse of ``write_grid_csv``: (row values, column values, matrix)."""
    with open(path, newline="", encoding="utf-8") as f:
        table = list(csv.reader(f))
    columns = [float(c) for c in table[0][1:]]
    rows = [float(r[0]) for r in table[1:]]
    matrix = [[float(x) for x in r[1:]] for r in table[1:]]
    return rows, columns, matrix
