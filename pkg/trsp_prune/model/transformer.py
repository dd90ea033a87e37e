"""
Gated, maskable decoder-only transformer.

Each layer's output is multiplied by its learnable gate before it becomes the next layer's
input. Masked layers are skipped entirely: the residual stream passes through unchanged and the
gate is not applied. Layers are addressed by their ORIGINAL index throughout, also after
pruning; ``ModelState.layer_ids`` keeps that provenance.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from ..core import ops
from ..core.enums import GatePlacement
from ..core.errors import DataError, TrspError
from ..core.tensor import Parameter, Tensor
from .config import ModelConfig

logger = logging.getLogger(__name__)

_MASK_VALUE = -1e9


class LayerIndexError(TrspError, ValueError):
    """Raised for invalid layer indices, repeated masking or invalid prune sets."""


@dataclass
class LayerParams:
    """Parameters of one pre-norm transformer layer."""

    ln1_weight: Parameter
    ln1_bias: Parameter
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    ln2_weight: Parameter
    ln2_bias: Parameter
    w_fc: Parameter
    b_fc: Parameter
    w_proj: Parameter
    b_proj: Parameter

    def named(self) -> Dict[str, Parameter]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def parameters(self) -> List[Parameter]:
        return list(self.named().values())

    def nbytes(self) -> int:
        return sum(p.data.nbytes for p in self.parameters())

    def clone(self) -> "LayerParams":
        return LayerParams(**{k: Parameter(p.data.copy(), p.name) for k, p in self.named().items()})


@dataclass
class LayerIOTrace:
    """
    Inputs and (ungated) outputs of traced layers, keyed by original layer index.

    The entries are live tensors, so differences built from them are differentiable when the
    forward ran inside a tape.
    """

    inputs: Dict[int, Tensor] = field(default_factory=dict)
    outputs: Dict[int, Tensor] = field(default_factory=dict)

    @property
    def layers(self) -> List[int]:
        return sorted(self.inputs)

    def difference(self, layer: int) -> Tensor:
        return ops.sub(self.outputs[layer], self.inputs[layer])


@dataclass
class ForwardOutput:
    logits: Tensor
    trace: Optional[LayerIOTrace] = None


class ModelState:
    """
    Transformer parameters, per-layer gates and the set of bypassed layers.
    """

    def __init__(
        self,
        config: ModelConfig,
        tok_emb: Parameter,
        pos_emb: Parameter,
        layers: List[LayerParams],
        ln_f_weight: Parameter,
        ln_f_bias: Parameter,
        head: Optional[Parameter],
        gates: Parameter,
        layer_ids: Optional[Sequence[int]] = None,
        mask_set: Optional[Iterable[int]] = None,
    ):
        self.config = config
        self.tok_emb = tok_emb
        self.pos_emb = pos_emb
        self.layers = layers
        self.ln_f_weight = ln_f_weight
        self.ln_f_bias = ln_f_bias
        self.head = head
        self.gates = gates
        self.layer_ids: List[int] = (
            list(layer_ids) if layer_ids is not None else list(range(len(layers)))
        )
        self.mask_set: Set[int] = set(mask_set or ())
        if len(self.layer_ids) != len(layers) or gates.shape != (len(layers),):
            raise LayerIndexError(
                f"{len(layers)} layers, {len(self.layer_ids)} ids and gates {gates.shape} disagree"
            )
        if config.n_layers != len(layers):
            raise LayerIndexError(
                f"config says {config.n_layers} layers but {len(layers)} were given"
            )

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelState":
        """Random initialisation; residual projections are scaled down with depth."""
        rng = np.random.default_rng(seed)
        std = config.init_std
        d, ff = config.d_model, config.ff_dim
        resid_std = std / math.sqrt(2.0 * config.n_layers)

        def normal(shape, s=std):
            return rng.normal(0.0, s, size=shape)

        layers = []
        for i in range(config.n_layers):
            layers.append(
                LayerParams(
                    ln1_weight=Parameter(np.ones(d), f"layers.{i}.ln1_weight"),
                    ln1_bias=Parameter(np.zeros(d), f"layers.{i}.ln1_bias"),
                    wq=Parameter(normal((d, d)), f"layers.{i}.wq"),
                    bq=Parameter(np.zeros(d), f"layers.{i}.bq"),
                    wk=Parameter(normal((d, d)), f"layers.{i}.wk"),
                    bk=Parameter(np.zeros(d), f"layers.{i}.bk"),
                    wv=Parameter(normal((d, d)), f"layers.{i}.wv"),
                    bv=Parameter(np.zeros(d), f"layers.{i}.bv"),
                    wo=Parameter(normal((d, d), resid_std), f"layers.{i}.wo"),
                    bo=Parameter(np.zeros(d), f"layers.{i}.bo"),
                    ln2_weight=Parameter(np.ones(d), f"layers.{i}.ln2_weight"),
                    ln2_bias=Parameter(np.zeros(d), f"layers.{i}.ln2_bias"),
                    w_fc=Parameter(normal((d, ff)), f"layers.{i}.w_fc"),
                    b_fc=Parameter(np.zeros(ff), f"layers.{i}.b_fc"),
                    w_proj=Parameter(normal((ff, d), resid_std), f"layers.{i}.w_proj"),
                    b_proj=Parameter(np.zeros(d), f"layers.{i}.b_proj"),
                )
            )
        return cls(
            config=config,
            tok_emb=Parameter(normal((config.vocab_size, d)), "tok_emb"),
            pos_emb=Parameter(normal((config.max_seq_len, d)), "pos_emb"),
            layers=layers,
            ln_f_weight=Parameter(np.ones(d), "ln_f_weight"),
            ln_f_bias=Parameter(np.zeros(d), "ln_f_bias"),
            head=None if config.tied_head else Parameter(normal((d, config.vocab_size)), "head"),
            gates=Parameter(np.ones(config.n_layers), "gates"),
        )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def active_layers(self) -> List[int]:
        """Original indices of layers that currently execute, in order."""
        return [i for i in self.layer_ids if i not in self.mask_set]

    def position_of(self, layer: int) -> int:
        """Current position of the layer with original index ``layer``."""
        try:
            return self.layer_ids.index(int(layer))
        except ValueError:
            raise LayerIndexError(
                f"Layer {layer} is not part of this model (layers: {self.layer_ids})"
            ) from None

    def gate(self, layer: int) -> float:
        return float(self.gates.data[self.position_of(layer)])

    def gate_values(self) -> Dict[int, float]:
        return {i: float(g) for i, g in zip(self.layer_ids, self.gates.data)}

    def reset_gates(self, layers: Optional[Iterable[int]] = None) -> None:
        """Set the gates of ``layers`` (all layers by default) back to 1."""
        targets = self.layer_ids if layers is None else layers
        for layer in targets:
            self.gates.data[self.position_of(layer)] = 1.0

    def layer(self, layer: int) -> LayerParams:
        return self.layers[self.position_of(layer)]

    def named_parameters(self) -> Dict[str, Parameter]:
        """All parameters in a fixed order, named by current layer position."""
        named: Dict[str, Parameter] = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb}
        for pos, layer in enumerate(self.layers):
            for key, p in layer.named().items():
                named[f"layers.{pos}.{key}"] = p
        named["ln_f_weight"] = self.ln_f_weight
        named["ln_f_bias"] = self.ln_f_bias
        if self.head is not None:
            named["head"] = self.head
        named["gates"] = self.gates
        return named

    def parameters(self) -> List[Parameter]:
        return list(self.named_parameters().values())

    def weight_parameters(self) -> List[Parameter]:
        """Every parameter except the gates."""
        return [p for p in self.parameters() if p is not self.gates]

    def num_parameters(self, include_gates: bool = False) -> int:
        params = self.parameters() if include_gates else self.weight_parameters()
        return int(sum(p.size for p in params))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "ModelState":
        """Deep copy with independent parameter storage."""
        return ModelState(
            config=ModelConfig.from_dict(self.config.to_dict()),
            tok_emb=Parameter(self.tok_emb.data.copy(), "tok_emb"),
            pos_emb=Parameter(self.pos_emb.data.copy(), "pos_emb"),
            layers=[layer.clone() for layer in self.layers],
            ln_f_weight=Parameter(self.ln_f_weight.data.copy(), "ln_f_weight"),
            ln_f_bias=Parameter(self.ln_f_bias.data.copy(), "ln_f_bias"),
            head=None if self.head is None else Parameter(self.head.data.copy(), "head"),
            gates=Parameter(self.gates.data.copy(), "gates"),
            layer_ids=list(self.layer_ids),
            mask_set=set(self.mask_set),
        )


def _check_tokens(state: ModelState, tokens: np.ndarray, start_pos: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2:
        raise DataError(f"tokens must be batch x seq, got shape {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= state.config.vocab_size):
        raise DataError(f"token id outside vocabulary of size {state.config.vocab_size}")
    if start_pos + tokens.shape[1] > state.config.max_seq_len:
        raise DataError(
            f"sequence of length {tokens.shape[1]} at offset {start_pos} exceeds "
            f"max_seq_len {state.config.max_seq_len}"
        )
    return tokens


def _attention(layer: LayerParams, h: Tensor, config: ModelConfig) -> Tensor:
    batch, seq, d = h.shape
    heads, hd = config.n_heads, config.head_dim

    def split(x: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(x, (batch, seq, heads, hd)), (0, 2, 1, 3))

    q = split(ops.add(ops.matmul(h, layer.wq), layer.bq))
    k = split(ops.add(ops.matmul(h, layer.wk), layer.bk))
    v = split(ops.add(ops.matmul(h, layer.wv), layer.bv))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    if seq > 1:
        causal = np.triu(np.ones((seq, seq), dtype=bool), k=1)
        scores = ops.masked_fill(scores, causal, _MASK_VALUE)
    attn = ops.softmax(scores)
    y = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (batch, seq, d))
    return ops.add(ops.matmul(y, layer.wo), layer.bo)


def layer_forward(layer: LayerParams, x: Tensor, config: ModelConfig) -> Tensor:
    """One pre-norm block: ``x + attn(ln1(x))`` then ``+ mlp(ln2(.))``."""
    eps = config.layernorm_eps
    h = ops.layernorm(x, layer.ln1_weight, layer.ln1_bias, eps)
    x = ops.add(x, _attention(layer, h, config))
    h = ops.layernorm(x, layer.ln2_weight, layer.ln2_bias, eps)
    h = ops.gelu(ops.add(ops.matmul(h, layer.w_fc), layer.b_fc))
    return ops.add(x, ops.add(ops.matmul(h, layer.w_proj), layer.b_proj))


def forward(
    state: ModelState,
    tokens,
    trace: bool = False,
    trace_layers: Optional[Iterable[int]] = None,
    apply_gates: bool = True,
    start_pos: int = 0,
) -> ForwardOutput:
    """
    Run the model.

    Args:
        state: Model to run
        tokens: Integer array batch x seq (a 1-D array is treated as one sequence)
        trace: Record X_in and X_out of the traced layers
        trace_layers: Original indices to trace; all unmasked layers when None
        apply_gates: Multiply layer outputs by their gates; False gives the ungated reference
        start_pos: Position of the first token (for single-token decoding)

    Returns:
        ForwardOutput with logits of shape batch x seq x vocab and the optional trace

    Raises:
        DataError: If a token is out of range or the sequence is too long
    """
    config = state.config
    tokens = _check_tokens(state, tokens, start_pos)
    seq = tokens.shape[1]
    wanted = set(state.active_layers if trace_layers is None else trace_layers)
    io = LayerIOTrace() if trace else None

    x = ops.add(
        ops.gather(state.tok_emb, tokens),
        ops.gather(state.pos_emb, np.arange(start_pos, start_pos + seq)),
    )
    for pos, (layer_id, layer) in enumerate(zip(state.layer_ids, state.layers)):
        if layer_id in state.mask_set:
            continue
        x_out = layer_forward(layer, x, config)
        if io is not None and layer_id in wanted:
            io.inputs[layer_id] = x
            io.outputs[layer_id] = x_out
        if not apply_gates:
            x = x_out
        elif config.gate_placement is GatePlacement.STREAM:
            x = ops.mul(x_out, ops.gather(state.gates, pos))
        else:
            x = ops.add(x, ops.mul(ops.sub(x_out, x), ops.gather(state.gates, pos)))

    h = ops.layernorm(x, state.ln_f_weight, state.ln_f_bias, config.layernorm_eps)
    if state.head is None:
        logits = ops.matmul(h, ops.transpose(state.tok_emb, (1, 0)))
    else:
        logits = ops.matmul(h, state.head)
    return ForwardOutput(logits=logits, trace=io)


def mask_layer(state: ModelState, idx: int) -> ModelState:
    """
    Bypass the layer with original index ``idx`` in subsequent forwards.

    Raises:
        LayerIndexError: If the layer does not exist or is already masked
    """
    state.position_of(idx)
    if idx in state.mask_set:
        raise LayerIndexError(f"Layer {idx} is already masked")
    state.mask_set.add(int(idx))
    logger.debug("Masked layer %d (mask set %s)", idx, sorted(state.mask_set))
    return state


def unmask_layer(state: ModelState, idx: int) -> ModelState:
    state.position_of(idx)
    if idx not in state.mask_set:
        raise LayerIndexError(f"Layer {idx} is not masked")
    state.mask_set.discard(int(idx))
    return state


def clear_mask(state: ModelState) -> ModelState:
    state.mask_set.clear()
    return state


def prune(state: ModelState, prune_set: Iterable[int]) -> ModelState:
    """
    Build a compact model without the layers in ``prune_set``.

    Surviving layers keep their relative order, their gates and their original indices.

    Raises:
        LayerIndexError: If an index is duplicated or not present in the model
    """
    removed = [int(i) for i in prune_set]
    if len(set(removed)) != len(removed):
        raise LayerIndexError(f"Duplicate layer indices in prune set {removed}")
    for idx in removed:
        state.position_of(idx)

    keep = [pos for pos, lid in enumerate(state.layer_ids) if lid not in set(removed)]
    config = ModelConfig.from_dict(state.config.to_dict(), n_layers=len(keep))
    layers = [state.layers[pos].clone() for pos in keep]
    for new_pos, layer in enumerate(layers):
        for key, p in layer.named().items():
            p.name = f"layers.{new_pos}.{key}"

    pruned = ModelState(
        config=config,
        tok_emb=Parameter(state.tok_emb.data.copy(), "tok_emb"),
        pos_emb=Parameter(state.pos_emb.data.copy(), "pos_emb"),
        layers=layers,
        ln_f_weight=Parameter(state.ln_f_weight.data.copy(), "ln_f_weight"),
        ln_f_bias=Parameter(state.ln_f_bias.data.copy(), "ln_f_bias"),
        head=None if state.head is None else Parameter(state.head.data.copy(), "head"),
        gates=Parameter(state.gates.data[keep].copy(), "gates"),
        layer_ids=[state.layer_ids[pos] for pos in keep],
        mask_set=state.mask_set - set(removed),
    )
    logger.info("Pruned layers %s: %d -> %d layers", removed, state.n_layers, pruned.n_layers)
    return pruned


def generate(state: ModelState, prompt, n_tokens: int) -> np.ndarray:
    """Greedy decoding; the context is truncated to the last ``max_seq_len`` tokens."""
    tokens = np.asarray(prompt, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    for _ in range(n_tokens):
        window = tokens[:, -state.config.max_seq_len :]
        logits = forward(state, window).logits.data
        tokens = np.concatenate([tokens, logits[:, -1, :].argmax(axis=-1)[:, None]], axis=1)
    return tokens
