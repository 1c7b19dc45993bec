"""Vowel-restricted phoneme-level LSTM language model."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Collection, Iterable, Sequence

import numpy as np

from . import numerics
from .errors import InsufficientData, NonFiniteLoss, SnapshotFormatError, UnknownSegment
from .lexicon import DatasetSplit, PhonemeInventory, WordForm
from .numerics import AdamState, ModelParams

log = logging.getLogger(__name__)

BOS = "<bos>"
MASK = "<mask>"
EOS = "<eos>"

_MODEL_MAGIC = b"VHPLM"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    """Input alphabet (BOS, MASK, segments) and output alphabet (vowels, EOS)."""

    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def __post_init__(self):
        if self.inputs[:2] != (BOS, MASK) or EOS in self.inputs:
            raise ValueError("input alphabet must start with BOS, MASK and exclude EOS")
        if self.outputs[-1] != EOS or BOS in self.outputs or MASK in self.outputs:
            raise ValueError("output alphabet must end with EOS and exclude BOS/MASK")
        object.__setattr__(self, "_in", {s: i for i, s in enumerate(self.inputs)})
        object.__setattr__(self, "_out", {s: i for i, s in enumerate(self.outputs)})

    @classmethod
    def build(cls, segments: Iterable[str], vowels: Collection[str]) -> Vocabulary:
        segments = sorted(set(segments))
        return cls(
            (BOS, MASK, *segments),
            (*[s for s in segments if s in vowels], EOS),
        )

    @property
    def vowels(self) -> tuple[str, ...]:
        return self.outputs[:-1]

    def in_index(self, symbol: str) -> int:
        try:
            return self._in[symbol]
        except KeyError:
            raise UnknownSegment(symbol) from None

    def out_index(self, symbol: str) -> int:
        try:
            return self._out[symbol]
        except KeyError:
            raise UnknownSegment(symbol) from None

    def knows(self, word: WordForm) -> bool:
        return all(s in self._in for s in word.segments)


@dataclass
class TrainingConfig:
    embedding_size: int = 32
    hidden_size: int = 256
    n_layers: int = 2
    dropout: float = 0.33
    batch_size: int = 32
    mask_prob: float = 0.25
    max_epochs: int = 100
    patience: int = 3
    min_delta: float = 1e-3
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eos_in_loss: bool = True

    def __post_init__(self):
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


@dataclass
class TrainedModel:
    params: ModelParams
    vocab: Vocabulary
    config: TrainingConfig
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config.seed


def target_positions(word: WordForm, vowels, include_eos: bool = False) -> list[int]:
    """Vowel positions preceded by at least one vowel.

    ``vowels`` is a PhonemeInventory or any collection of vowel segments.
    With ``include_eos`` the end-of-word index ``len(word)`` is appended when
    the word contains a vowel.
    """
    if isinstance(vowels, PhonemeInventory):
        vowels = vowels.vowels
    out = []
    seen_vowel = False
    for t, seg in enumerate(word.segments):
        if seg in vowels:
            if seen_vowel:
                out.append(t)
            seen_vowel = True
    if include_eos and seen_vowel:
        out.append(len(word.segments))
    return out


def _encode(
    forms: Sequence[WordForm],
    vocab: Vocabulary,
    include_eos: bool,
    mask_prob: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Inputs, targets and 0/1 target weights as (B, T) arrays; T = 1 + longest form."""
    vowel_set = set(vocab.vowels)
    T = 1 + max(len(f) for f in forms)
    B = len(forms)
    mask_id = vocab.in_index(MASK)
    inputs = np.full((B, T), mask_id, dtype=np.int64)
    targets = np.zeros((B, T), dtype=np.int64)
    weights = np.zeros((B, T))
    inputs[:, 0] = vocab.in_index(BOS)
    eos = vocab.out_index(EOS)
    for b, form in enumerate(forms):
        n = len(form)
        inputs[b, 1 : n + 1] = [vocab.in_index(s) for s in form.segments]
        for t in target_positions(form, vowel_set, include_eos):
            targets[b, t] = eos if t == n else vocab.out_index(form.segments[t])
            weights[b, t] = 1.0
    if mask_prob > 0:
        drop = rng.random((B, T)) < mask_prob
        drop[:, 0] = False
        inputs[drop] = mask_id
    return inputs, targets, weights


def _count_targets(forms: Iterable[WordForm], vowels, include_eos: bool) -> int:
    return sum(len(target_positions(f, vowels, include_eos)) for f in forms)


def evaluate_loss(
    params: ModelParams, vocab: Vocabulary, forms: Sequence[WordForm],
    include_eos: bool, batch_size: int = 256,
) -> float:
    """Mean cross-entropy (nats) per target position, without masking or dropout."""
    total, count = 0.0, 0
    for start in range(0, len(forms), batch_size):
        chunk = forms[start : start + batch_size]
        inputs, targets, weights = _encode(chunk, vocab, include_eos)
        if not weights.any():
            continue
        loss, _ = numerics.sequence_loss(params, inputs, targets, weights, with_grads=False)
        total += loss
        count += int(weights.sum())
    if count == 0:
        raise InsufficientData("no target positions to evaluate")
    return total / count


def train(split: DatasetSplit, inventory: PhonemeInventory, config: TrainingConfig | None = None) -> TrainedModel:
    """Fit a model on ``split.train`` with early stopping on ``split.valid``.

    The test split is never read.  Parameters from the epoch with the lowest
    validation loss are returned.
    """
    config = config or TrainingConfig()
    eos = config.eos_in_loss
    seen = [s for f in (*split.train, *split.valid) for s in f.segments]
    vocab = Vocabulary.build(seen, inventory.vowels)
    vowel_set = set(vocab.vowels)
    train_forms = [f for f in split.train if target_positions(f, vowel_set, eos)]
    valid_forms = [f for f in split.valid if target_positions(f, vowel_set, eos)]
    if not train_forms or not valid_forms:
        raise InsufficientData("train and valid splits both need target positions")

    rng = np.random.default_rng(config.seed)
    params = ModelParams.init(
        len(vocab.inputs), len(vocab.outputs),
        config.embedding_size, config.hidden_size, config.n_layers, rng,
    )
    moments = AdamState.zeros_like(params)
    step = 0
    history = []
    best_loss = np.inf
    best_params = params.copy()
    best_epoch = 0
    ref_loss = np.inf
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_forms))
        epoch_loss, epoch_count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_forms[i] for i in order[start : start + config.batch_size]]
            inputs, targets, weights = _encode(batch, vocab, eos, config.mask_prob, rng)
            n_targets = weights.sum()
            loss, grads = numerics.sequence_loss(
                params, inputs, targets, weights / n_targets,
                dropout=config.dropout, rng=rng,
            )
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: loss is {loss}")
            step += 1
            params, moments = numerics.adam_update(
                params, grads, moments, step, config.lr, config.beta1, config.beta2, config.adam_eps
            )
            epoch_loss += loss * n_targets
            epoch_count += n_targets
        valid_loss = evaluate_loss(params, vocab, valid_forms, eos)
        if not np.isfinite(valid_loss):
            raise NonFiniteLoss(f"epoch {epoch}: validation loss is {valid_loss}")
        history.append({"epoch": epoch, "train_loss": epoch_loss / epoch_count, "valid_loss": valid_loss})
        log.info("epoch %d train %.4f valid %.4f", epoch, epoch_loss / epoch_count, valid_loss)
        if valid_loss < best_loss:
            best_loss, best_params, best_epoch = valid_loss, params.copy(), epoch
        if valid_loss < ref_loss - config.min_delta:
            ref_loss, stale = valid_loss, 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    return TrainedModel(best_params, vocab, config, history, best_epoch)


def _forward_probs(model: TrainedModel, forms: Sequence[WordForm]) -> np.ndarray:
    vocab = model.vocab
    T = 1 + max(len(f) for f in forms)
    inputs = np.full((len(forms), T), vocab.in_index(MASK), dtype=np.int64)
    inputs[:, 0] = vocab.in_index(BOS)
    for b, f in enumerate(forms):
        inputs[b, 1 : len(f) + 1] = [vocab.in_index(s) for s in f.segments]
    top, _ = numerics.lstm_forward(model.params, inputs)
    return numerics.masked_softmax(numerics.output_logits(model.params, top))


def predict_batch(
    model: TrainedModel, forms: Sequence[WordForm], include_eos: bool = False, batch_size: int = 256,
) -> list[list[tuple[int, np.ndarray]]]:
    """Per form, ``(position, distribution over vocab.outputs)`` at each target position."""
    for f in forms:
        if not model.vocab.knows(f):
            missing = sorted({s for s in f.segments if s not in model.vocab.inputs})
            raise UnknownSegment(f"{f} contains segments unseen in training: {missing}")
    vowel_set = set(model.vocab.vowels)
    out = []
    for start in range(0, len(forms), batch_size):
        chunk = forms[start : start + batch_size]
        probs = _forward_probs(model, chunk)
        for b, f in enumerate(chunk):
            out.append([(t, probs[b, t]) for t in target_positions(f, vowel_set, include_eos)])
    return out


def predict_distributions(model: TrainedModel, word: WordForm, include_eos: bool = False):
    """Predictive distributions over ``model.vocab.outputs`` at the word's target positions."""
    return predict_batch(model, [word], include_eos)[0]


# ---------------------------------------------------------------------------
# model files


def model_to_bytes(model: TrainedModel) -> bytes:
    header = {
        "vocab": {"inputs": list(model.vocab.inputs), "outputs": list(model.vocab.outputs)},
        "config": asdict(model.config),
        "history": model.history,
        "best_epoch": model.best_epoch,
        "metadata": model.metadata,
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    return _MODEL_MAGIC + struct.pack("<II", _MODEL_VERSION, len(blob)) + blob + numerics.params_to_bytes(model.params)


def model_from_bytes(data: bytes) -> TrainedModel:
    if data[:5] != _MODEL_MAGIC:
        raise SnapshotFormatError("not a model file")
    version, hlen = struct.unpack("<II", data[5:13])
    if version != _MODEL_VERSION:
        raise SnapshotFormatError(f"unsupported model file version {version}")
    header = json.loads(data[13 : 13 + hlen].decode("utf-8"))
    params = numerics.params_from_bytes(data[13 + hlen :])
    vocab = Vocabulary(tuple(header["vocab"]["inputs"]), tuple(header["vocab"]["outputs"]))
    return TrainedModel(
        params, vocab, TrainingConfig(**header["config"]),
        header["history"], header["best_epoch"], header["metadata"],
    )


def save_model(model: TrainedModel, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path: str | os.PathLike) -> TrainedModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
