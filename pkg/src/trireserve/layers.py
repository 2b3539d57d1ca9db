"""Network building blocks: dense layers, GRU cells, embeddings, dropout.

All blocks work on single vectors or on ``(batch, features)`` matrices.
Parameters are plain :class:`~trireserve.autograd.Tensor` leaves so the
optimizer can update them in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Tensor, concat, matvec_affine, mul, relu, sigmoid, take_rows, tanh_act
from .errors import ContractError, DimensionError, EmptyHistoryError, UnknownLevelError

ACTIVATIONS = ("relu", "linear")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation: str = "relu") -> DenseLayer:
        return cls(
            Tensor(glorot_uniform(rng, out_dim, in_dim), requires_grad=True),
            Tensor(np.zeros(out_dim), requires_grad=True),
            activation,
        )

    def __call__(self, x: Tensor) -> Tensor:
        z = matvec_affine(self.W, x, self.b)
        return relu(z) if self.activation == "relu" else z

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


@dataclass
class GruCell:
    """Weights act on the concatenation ``[h, x]`` (hidden state first)."""

    W_h: Tensor
    W_r: Tensor
    W_u: Tensor
    b_h: Tensor
    b_r: Tensor
    b_u: Tensor

    def __post_init__(self):
        shape = self.W_h.shape
        if self.W_r.shape != shape or self.W_u.shape != shape:
            raise DimensionError(
                f"GRU weights must share a shape, got {self.W_h.shape}, {self.W_r.shape}, {self.W_u.shape}"
            )
        if shape[1] <= shape[0]:
            raise DimensionError(f"GRU weight shape {shape} leaves no room for an input")
        for b in (self.b_h, self.b_r, self.b_u):
            if b.shape != (shape[0],):
                raise DimensionError(f"GRU bias shape {b.shape} does not match weight shape {shape}")

    @property
    def units(self) -> int:
        return self.W_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_h.shape[1] - self.W_h.shape[0]

    @classmethod
    def init(cls, input_dim: int, units: int, rng: np.random.Generator) -> GruCell:
        fan_in = units + input_dim
        weights = [Tensor(glorot_uniform(rng, units, fan_in), requires_grad=True) for _ in range(3)]
        biases = [Tensor(np.zeros(units), requires_grad=True) for _ in range(3)]
        return cls(*weights, *biases)

    def parameters(self) -> list[Tensor]:
        return [self.W_h, self.W_r, self.W_u, self.b_h, self.b_r, self.b_u]


def gru_cell_step(cell: GruCell, h_prev: Tensor, x: Tensor) -> Tensor:
    if h_prev.shape[-1] != cell.units or x.shape[-1] != cell.input_dim or h_prev.data.ndim != x.data.ndim:
        raise DimensionError(
            f"gru_cell_step: state shape {h_prev.shape} and input shape {x.shape} "
            f"do not fit a cell with {cell.units} units and input dim {cell.input_dim}"
        )
    hx = concat([h_prev, x])
    reset = sigmoid(matvec_affine(cell.W_r, hx, cell.b_r))
    update = sigmoid(matvec_affine(cell.W_u, hx, cell.b_u))
    candidate = tanh_act(matvec_affine(cell.W_h, concat([mul(reset, h_prev), x]), cell.b_h))
    return mul(update, candidate) + mul(1.0 - update, h_prev)


def _zero_state(cell: GruCell, like: Tensor) -> Tensor:
    return Tensor(np.zeros(like.shape[:-1] + (cell.units,)))


def gru_encode(
    cell: GruCell,
    sequence: Sequence[Tensor],
    mask: Sequence,
    input_keep: np.ndarray | None = None,
) -> Tensor:
    """Run the cell over the unmasked steps of ``sequence`` from a zero state.

    ``mask`` holds one entry per step: a bool, or for batched input a bool
    array with one flag per row. Masked steps leave that row's state
    untouched. ``input_keep`` is an optional constant multiplier applied to
    every input step (a dropout mask shared across time).
    """
    if len(sequence) != len(mask):
        raise ContractError(f"sequence has {len(sequence)} steps but mask has {len(mask)}")
    if not sequence:
        raise EmptyHistoryError("empty sequence")
    flags = [np.asarray(m, dtype=bool) for m in mask]
    seen = np.zeros_like(flags[0])
    for f in flags:
        seen = seen | f
    if not np.all(seen):
        raise EmptyHistoryError("history is fully masked")

    h = _zero_state(cell, sequence[0])
    keep = Tensor(input_keep) if input_keep is not None else None
    for x, f in zip(sequence, flags):
        if not f.any():
            continue
        if keep is not None:
            x = mul(x, keep)
        h_new = gru_cell_step(cell, h, x)
        if f.all():
            h = h_new
        else:
            on = np.broadcast_to(f[:, None], h.shape).astype(np.float64)
            h = mul(h_new, Tensor(on)) + mul(h, Tensor(1.0 - on))
    return h


def gru_decode(cell: GruCell, context: Tensor, steps: int) -> list[Tensor]:
    """Feed ``context`` as the input at each of ``steps`` steps; return every state."""
    if steps < 1:
        raise ContractError(f"gru_decode needs steps >= 1, got {steps}")
    h = _zero_state(cell, context)
    states = []
    for _ in range(steps):
        h = gru_cell_step(cell, h, context)
        states.append(h)
    return states


@dataclass
class EmbeddingTable:
    E: Tensor

    @property
    def num_levels(self) -> int:
        return self.E.shape[0]

    @property
    def k(self) -> int:
        return self.E.shape[1]

    @classmethod
    def init(cls, num_levels: int, k: int, rng: np.random.Generator) -> EmbeddingTable:
        return cls(Tensor(glorot_uniform(rng, num_levels, k), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return [self.E]


def embed_lookup(table: EmbeddingTable, level) -> Tensor:
    """Row ``level`` of the table (an int), or one row per entry of an index array."""
    idx = np.asarray(level)
    if idx.dtype.kind not in "iu" or np.any(idx < 0) or np.any(idx >= table.num_levels):
        raise UnknownLevelError(f"unknown level {level!r} for a table with {table.num_levels} levels")
    return take_rows(table.E, idx)


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ContractError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.mode not in ("train", "infer"):
            raise ContractError(f"dropout mode must be 'train' or 'infer', got {self.mode!r}")

    @property
    def active(self) -> bool:
        return self.mode == "train" and self.rate > 0.0


def dropout_mask(spec: DropoutSpec, shape, rng: np.random.Generator) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when dropout is a no-op."""
    if not spec.active:
        return None
    keep = rng.random(shape) >= spec.rate
    return keep / (1.0 - spec.rate)


def dropout_apply(spec: DropoutSpec, x: Tensor, rng: np.random.Generator) -> Tensor:
    m = dropout_mask(spec, x.shape, rng)
    return x if m is None else mul(x, Tensor(m))
