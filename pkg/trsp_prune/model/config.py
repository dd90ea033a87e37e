"""
Architecture configuration of the gated decoder-only transformer.
"""

from dataclasses import asdict, dataclass
from typing import Optional

from ..core.enums import GatePlacement
from ..core.errors import ConfigError


@dataclass
class ModelConfig:
    """
    Shape of the transformer.

    Attributes:
        n_layers: Number of transformer layers in the unpruned model
        d_model: Hidden width
        n_heads: Attention heads; must divide ``d_model``
        ff_dim: MLP inner width; ``4 * d_model`` when left at 0
        vocab_size: Vocabulary size
        max_seq_len: Longest supported sequence
        layernorm_eps: Layer norm epsilon
        tied_head: Reuse the token embedding as the output projection
        gate_placement: Whether gates scale the whole layer output or only its residual delta
        init_std: Standard deviation of the weight initialisation
    """

    n_layers: int = 8
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 0
    vocab_size: int = 258
    max_seq_len: int = 128
    layernorm_eps: float = 1e-5
    tied_head: bool = False
    gate_placement: GatePlacement = GatePlacement.STREAM
    init_std: float = 0.02

    def __post_init__(self):
        if isinstance(self.gate_placement, str):
            self.gate_placement = GatePlacement(self.gate_placement)
        if self.ff_dim == 0:
            self.ff_dim = 4 * self.d_model
        self.validate()

    def validate(self) -> None:
        """
        Check the configuration.

        Raises:
            ConfigError: If a count is below one, heads do not divide the width or eps <= 0
        """
        for name in ("n_layers", "d_model", "n_heads", "ff_dim", "vocab_size", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be at least 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"model.d_model ({self.d_model}) not divisible by model.n_heads ({self.n_heads})"
            )
        if not self.layernorm_eps > 0:
            raise ConfigError(f"model.layernorm_eps must be positive, got {self.layernorm_eps}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        data = asdict(self)
        data["gate_placement"] = self.gate_placement.value
        return data

    @classmethod
    def from_dict(cls, data: dict, n_layers: Optional[int] = None) -> "ModelConfig":
        values = dict(data)
        if n_layers is not None:
            values["n_layers"] = n_layers
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"Invalid model config: {e}") from e
