"""Sequence-to-sequence reserving network.

Architecture, per line of business:

* an encoder GRU summarizes the (paid, outstanding) loss-ratio history;
* the summary is repeated ``I - 1`` times and fed to a decoder GRU;
* each decoded state is concatenated with the company embedding and passed
  through two ReLU heads (hidden layer, dropout, one output unit), one for
  incremental paid and one for case outstanding. Head weights are shared
  across timesteps.

Training minimizes the masked per-sample squared error averaged over the
response steps and the two outputs, using AMSGrad, with early stopping on a
held-back validation split. Ensembles differ only in their seed.
"""

from __future__ import annotations

import base64
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .autograd import Tensor, Tape, concat, mul, reshape, sub, sum_all
from .errors import ContractError, DataError, DivergenceError, EmptyHistoryError, EnsembleMemberError
from .layers import DenseLayer, DropoutSpec, EmbeddingTable, GruCell, dropout_mask, embed_lookup, gru_decode, gru_encode
from .optim import AmsgradState, amsgrad_step
from .triangles import InferenceInput, Sample, Triangle, inference_inputs

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "trireserve-model"
ARTIFACT_VERSION = 1


@dataclass
class ModelConfig:
    encoder_units: int = 128
    decoder_units: int = 128
    gru_dropout: float = 0.2
    head_hidden_units: int = 64
    head_dropout: float = 0.2
    embedding_dim: int | None = None  # None -> num_levels - 1
    sequence_length: int | None = None  # None -> I - 1, taken from the samples
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    bias_correction: bool = True
    max_epochs: int = 1000
    patience: int = 200
    ensemble_size: int = 100
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("encoder_units", "decoder_units", "head_hidden_units", "max_epochs", "patience",
                     "ensemble_size", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("gru_dropout", "head_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ContractError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        for name in ("embedding_dim", "sequence_length"):
            value = getattr(self, name)
            if value is not None and int(value) < 1:
                raise ContractError(f"{name} must be positive, got {value}")

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> ModelConfig:
        return ModelConfig(**{**asdict(self), **changes})


@dataclass
class Head:
    hidden: DenseLayer
    output: DenseLayer

    def parameters(self) -> list[Tensor]:
        return self.hidden.parameters() + self.output.parameters()


@dataclass
class ModelParams:
    encoder: GruCell
    decoder: GruCell
    embedding: EmbeddingTable
    paid_head: Head
    os_head: Head

    @classmethod
    def init(cls, config: ModelConfig, num_levels: int, rng: np.random.Generator) -> ModelParams:
        k = config.embedding_dim or max(1, num_levels - 1)
        head_in = config.decoder_units + k
        # draw order is part of the determinism contract
        encoder = GruCell.init(2, config.encoder_units, rng)
        decoder = GruCell.init(config.encoder_units, config.decoder_units, rng)
        embedding = EmbeddingTable.init(num_levels, k, rng)
        heads = [
            Head(DenseLayer.init(head_in, config.head_hidden_units, rng),
                 DenseLayer.init(config.head_hidden_units, 1, rng))
            for _ in range(2)
        ]
        return cls(encoder, decoder, embedding, *heads)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, cell in (("encoder", self.encoder), ("decoder", self.decoder)):
            for name in ("W_h", "W_r", "W_u", "b_h", "b_r", "b_u"):
                out[f"{prefix}.{name}"] = getattr(cell, name)
        out["embedding.E"] = self.embedding.E
        for prefix, head in (("paid_head", self.paid_head), ("os_head", self.os_head)):
            out[f"{prefix}.hidden.W"] = head.hidden.W
            out[f"{prefix}.hidden.b"] = head.hidden.b
            out[f"{prefix}.output.W"] = head.output.W
            out[f"{prefix}.output.b"] = head.output.b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, t in self.named_parameters().items():
            t.data[...] = snap[k]


# --- forward pass and loss ---------------------------------------------------


def _head(head: Head, z: Tensor, spec: DropoutSpec, rng) -> Tensor:
    a = head.hidden(z)
    m = dropout_mask(spec, a.shape, rng)
    if m is not None:
        a = mul(a, Tensor(m))
    return head.output(a)


def forward_batch(
    params: ModelParams,
    history: np.ndarray,
    history_mask: np.ndarray,
    companies: np.ndarray,
    config: ModelConfig | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Predict ``(steps, batch)`` paid and outstanding ratios for a batch.

    ``history`` is ``(batch, steps, 2)``, left-padded, with ``history_mask``
    marking real steps. The number of decoded steps equals the padded
    history length. Dropout is active only when ``train`` is true.
    """
    history = np.asarray(history, dtype=np.float64)
    history_mask = np.asarray(history_mask, dtype=bool)
    batch, steps, _ = history.shape
    if not history_mask.any(axis=1).all():
        raise EmptyHistoryError("at least one history in the batch is fully masked")
    config = config or ModelConfig()
    mode = "train" if train else "infer"
    gru_spec = DropoutSpec(config.gru_dropout, mode)
    head_spec = DropoutSpec(config.head_dropout, mode)
    if gru_spec.active or head_spec.active:
        if rng is None:
            raise ContractError("training-mode dropout needs a random generator")

    first = int(np.argmax(history_mask.any(axis=0)))
    seq = [Tensor(history[:, t, :]) for t in range(first, steps)]
    mask = [history_mask[:, t] for t in range(first, steps)]
    keep = dropout_mask(gru_spec, (batch, 2), rng)
    context = gru_encode(params.encoder, seq, mask, input_keep=keep)

    keep = dropout_mask(gru_spec, context.shape, rng)
    if keep is not None:
        context = mul(context, Tensor(keep))
    decoded = gru_decode(params.decoder, context, steps)

    emb = embed_lookup(params.embedding, np.asarray(companies, dtype=np.intp))
    z = concat([concat(decoded, axis=0), concat([emb] * steps, axis=0)], axis=1)
    paid = reshape(_head(params.paid_head, z, head_spec, rng), (steps, batch))
    outstanding = reshape(_head(params.os_head, z, head_spec, rng), (steps, batch))
    return paid, outstanding


def forward(params: ModelParams, history, history_mask, company_index: int, config=None) -> tuple[Tensor, Tensor]:
    """Inference-mode forward pass for one history; returns two ``(steps,)`` tensors."""
    history = np.asarray(history, dtype=np.float64)
    paid, outstanding = forward_batch(
        params, history[None], np.asarray(history_mask, dtype=bool)[None],
        np.array([company_index]), config, train=False,
    )
    steps = history.shape[0]
    return reshape(paid, (steps,)), reshape(outstanding, (steps,))


def batch_loss(paid: Tensor, outstanding: Tensor, response: np.ndarray, response_mask: np.ndarray) -> Tensor:
    """Mean over the batch of the per-sample masked loss.

    Each sample contributes the average over its unmasked response steps of
    ``((paid_hat - paid)^2 + (os_hat - os)^2) / 2``.
    """
    response = np.asarray(response, dtype=np.float64)
    rmask = np.asarray(response_mask, dtype=bool)
    counts = rmask.sum(axis=1)
    if np.any(counts == 0):
        raise ContractError("every sample needs at least one unmasked response step")
    batch = rmask.shape[0]
    weight = (rmask / (2.0 * counts[:, None] * batch)).T
    dp = sub(paid, Tensor(response[:, :, 0].T))
    do = sub(outstanding, Tensor(response[:, :, 1].T))
    return sum_all(mul(mul(dp, dp) + mul(do, do), Tensor(weight)))


def sample_loss(pred: tuple[Tensor, Tensor], sample: Sample) -> Tensor:
    paid, outstanding = pred
    steps = paid.shape[0]
    return batch_loss(
        reshape(paid, (steps, 1)), reshape(outstanding, (steps, 1)),
        sample.response[None], sample.response_mask[None],
    )


# --- training ----------------------------------------------------------------


@dataclass
class _Arrays:
    history: np.ndarray
    history_mask: np.ndarray
    response: np.ndarray
    response_mask: np.ndarray
    companies: np.ndarray

    @classmethod
    def of(cls, samples: Sequence[Sample]) -> _Arrays:
        return cls(
            np.stack([s.history for s in samples]),
            np.stack([s.history_mask for s in samples]),
            np.stack([s.response for s in samples]),
            np.stack([s.response_mask for s in samples]),
            np.array([s.company_index for s in samples], dtype=np.intp),
        )

    def __len__(self):
        return len(self.companies)

    def take(self, idx) -> _Arrays:
        return _Arrays(self.history[idx], self.history_mask[idx], self.response[idx],
                       self.response_mask[idx], self.companies[idx])


def mean_loss(params: ModelParams, samples: Sequence[Sample] | _Arrays, config=None, chunk: int = 4096) -> float:
    """Inference-mode mean per-sample loss."""
    arr = samples if isinstance(samples, _Arrays) else _Arrays.of(samples)
    total = 0.0
    for start in range(0, len(arr), chunk):
        part = arr.take(slice(start, start + chunk))
        p, o = forward_batch(params, part.history, part.history_mask, part.companies, config)
        total += batch_loss(p, o, part.response, part.response_mask).item() * len(part)
    return total / len(arr)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float


@dataclass
class TrainingResult:
    params: ModelParams
    config: ModelConfig
    seed: int
    num_levels: int
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_validation_loss(self) -> float:
        return self.trace[self.best_epoch - 1].validation_loss


def train(
    config: ModelConfig,
    samples: Sequence[Sample],
    num_levels: int | None = None,
    seed: int | None = None,
) -> TrainingResult:
    """Fit one network; returns the parameters from the best validation epoch."""
    train_set = [s for s in samples if s.split == "train"]
    val_set = [s for s in samples if s.split == "validation"]
    if not train_set or not val_set:
        raise ContractError(
            f"training needs both splits, got {len(train_set)} train and {len(val_set)} validation samples"
        )
    if num_levels is None:
        num_levels = max(s.company_index for s in samples) + 1
    seed = config.seed if seed is None else seed
    steps = train_set[0].history.shape[0]
    if config.sequence_length is not None and config.sequence_length != steps:
        raise ContractError(f"samples have {steps} steps, config expects {config.sequence_length}")

    rng = np.random.default_rng(seed)
    params = ModelParams.init(config, num_levels, rng)
    plist = params.parameters()
    opt = AmsgradState(config.learning_rate, config.beta1, config.beta2, config.epsilon, config.bias_correction)
    tr = _Arrays.of(train_set)
    va = _Arrays.of(val_set)
    result = TrainingResult(params, config, seed, num_levels)

    best = np.inf
    best_snap = params.snapshot()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(tr))
        running = 0.0
        for b, start in enumerate(range(0, len(tr), config.batch_size)):
            part = tr.take(order[start:start + config.batch_size])
            with Tape() as tape:
                p, o = forward_batch(params, part.history, part.history_mask, part.companies,
                                     config, train=True, rng=rng)
                loss = batch_loss(p, o, part.response, part.response_mask)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(epoch, b, value)
            tape.backward(loss)
            amsgrad_step(opt, plist)
            running += value * len(part)
        val_loss = mean_loss(params, va, config)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, -1, val_loss)
        result.trace.append(EpochRecord(epoch, running / len(tr), val_loss))
        if val_loss < best:
            best = val_loss
            result.best_epoch = epoch
            best_snap = params.snapshot()
        elif epoch - result.best_epoch >= config.patience:
            log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
            break
    params.restore(best_snap)
    return result


def _train_member(args) -> TrainingResult:
    config, samples, num_levels, member = args
    try:
        return train(config, samples, num_levels, seed=config.seed + member)
    except Exception as exc:  # re-raised with the member index attached
        raise EnsembleMemberError(member, exc) from exc


def ensemble_train(
    config: ModelConfig,
    samples: Sequence[Sample],
    num_levels: int | None = None,
    jobs: int = 1,
) -> list[TrainingResult]:
    """Train ``config.ensemble_size`` members with seeds ``seed + 0 .. seed + n - 1``."""
    if num_levels is None:
        num_levels = max(s.company_index for s in samples) + 1
    tasks = [(config, list(samples), num_levels, m) for m in range(config.ensemble_size)]
    if jobs <= 1:
        return [_train_member(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_member, tasks))


# --- forecasting ---------------------------------------------------------------


@dataclass
class CompanyForecast:
    """Forecast cells for one company; arrays are ``I x I``, NaN where not forecast."""

    company: int | str
    premium: np.ndarray
    paid_ratio: np.ndarray
    os_ratio: np.ndarray

    @property
    def paid(self) -> np.ndarray:
        return self.paid_ratio * self.premium[:, None]

    @property
    def outstanding(self) -> np.ndarray:
        return self.os_ratio * self.premium[:, None]


@dataclass
class Forecast:
    label: str
    companies: dict = field(default_factory=dict)

    def __getitem__(self, company) -> CompanyForecast:
        return self.companies[company]


def predict_ratios(models: Sequence[ModelParams], inputs: Sequence[InferenceInput], config=None):
    """Ensemble-mean ``(batch, steps)`` paid and outstanding ratio predictions."""
    history = np.stack([x.history for x in inputs])
    hmask = np.stack([x.history_mask for x in inputs])
    companies = np.array([x.company_index for x in inputs], dtype=np.intp)
    paid_sum = 0.0
    os_sum = 0.0
    for params in models:
        p, o = forward_batch(params, history, hmask, companies, config)
        paid_sum = paid_sum + p.data.T
        os_sum = os_sum + o.data.T
    return paid_sum / len(models), os_sum / len(models)


def forecast(
    models: Sequence[ModelParams],
    triangles: Sequence[Triangle] | Triangle,
    company_index: dict | None = None,
    label: str = "DT",
    config: ModelConfig | None = None,
) -> Forecast:
    """Fill each triangle's unobserved cells with the ensemble-mean prediction.

    Decoded step ``s`` of accident year ``i`` maps to lag ``I - i + 1 + s``;
    only the first ``i - 1`` steps are kept.
    """
    if not models:
        raise ContractError("forecast needs at least one model")
    if isinstance(triangles, Triangle):
        triangles = [triangles]
    if company_index is None:
        company_index = {t.company: k for k, t in enumerate(triangles)}
    out = Forecast(label)
    for t in triangles:
        inputs = inference_inputs(t, company_index[t.company])
        paid, outstanding = predict_ratios(models, inputs, config)
        n = t.size
        pr = np.full((n, n), np.nan)
        orat = np.full((n, n), np.nan)
        for row, x in enumerate(inputs):
            r = x.accident_year - 1
            h = x.horizon
            pr[r, n - h:] = paid[row, :h]
            orat[r, n - h:] = outstanding[row, :h]
        out.companies[t.company] = CompanyForecast(t.company, t.premium.copy(), pr, orat)
    return out


# --- persistence -----------------------------------------------------------------


def _encode(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "dtype": "<f8",
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def save_model(result: TrainingResult, path: str | Path, extra: dict | None = None) -> None:
    """Write a JSON artifact; parameters are stored as base64 little-endian float64."""
    doc = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "package_version": __version__,
        "config": asdict(result.config),
        "seed": result.seed,
        "num_levels": result.num_levels,
        "best_epoch": result.best_epoch,
        "params": {k: _encode(v) for k, v in result.params.snapshot().items()},
        "trace": [asdict(r) for r in result.trace],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> TrainingResult:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model artifact not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != ARTIFACT_FORMAT:
        raise DataError(f"{path}: not a {ARTIFACT_FORMAT} artifact")
    if doc.get("version") != ARTIFACT_VERSION:
        raise DataError(f"{path}: unsupported artifact version {doc.get('version')}")
    config = ModelConfig.from_dict(doc["config"])
    params = ModelParams.init(config, doc["num_levels"], np.random.default_rng(0))
    snap = {k: _decode(v) for k, v in doc["params"].items()}
    expected = params.named_parameters()
    if set(snap) != set(expected):
        raise DataError(f"{path}: parameter set does not match the configured architecture")
    for k, t in expected.items():
        if snap[k].shape != t.shape:
            raise DataError(f"{path}: parameter {k} has shape {snap[k].shape}, expected {t.shape}")
    params.restore(snap)
    trace = [EpochRecord(**r) for r in doc["trace"]]
    return TrainingResult(params, config, doc["seed"], doc["num_levels"], trace, doc["best_epoch"])


__all__ = [
    "ModelConfig", "ModelParams", "Head", "forward", "forward_batch", "batch_loss", "sample_loss",
    "mean_loss", "train", "ensemble_train", "TrainingResult", "EpochRecord", "forecast",
    "Forecast", "CompanyForecast", "predict_ratios", "save_model", "load_model",
]
