"""RMSprop training loop with frame- and sentence-level evaluation."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .errors import ConfigurationError, ContractViolationError, TrainingDivergedError
from .nn import ModelConfig

log = logging.getLogger(__name__)


@dataclass
class RMSprop:
    """``v <- alpha v + (1 - alpha) g^2``; ``p <- p - lr g / (sqrt(v) + eps)``."""

    lr: float = 0.001
    alpha: float = 0.95
    epsilon: float = 1e-7
    state: dict = dataclasses.field(default_factory=dict)

    def step(self, params, grads):
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ContractViolationError(f"{key}: gradient shape {g.shape} != parameter shape {p.shape}")
            v = self.state.get(key)
            if v is None:
                v = np.zeros_like(p)
            v = self.alpha * v + (1.0 - self.alpha) * g * g
            self.state[key] = v.astype(p.dtype, copy=False)
            p -= (self.lr * g / (np.sqrt(v) + self.epsilon)).astype(p.dtype, copy=False)


def rmsprop_step(params, grads, state, lr=0.001, alpha=0.95, epsilon=1e-7):
    """Functional form of one RMSprop update; mutates ``params`` and ``state`` in place."""
    opt = RMSprop(lr, alpha, epsilon, state)
    opt.step(params, grads)
    return params, opt.state


def cross_entropy(posteriors, labels):
    """Mean negative log posterior and its gradient at the pre-softmax logits."""
    posteriors = np.asarray(posteriors)
    labels = np.asarray(labels)
    n = posteriors.shape[0]
    rows = np.arange(n)
    tiny = np.finfo(posteriors.dtype).tiny
    loss = float(-np.mean(np.log(np.maximum(posteriors[rows, labels], tiny))))
    grad = posteriors.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def classification_error_rate(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must be non-empty and equally long")
    return 100.0 * float(np.mean(predictions != labels))


def predict_posteriors(network, chunks, batch_size=256):
    out = [network.forward(chunks[i:i + batch_size], training=False)
           for i in range(0, len(chunks), batch_size)]
    return np.concatenate(out, axis=0)


def sentence_classify(network, chunks):
    """Average the chunk posteriors of one sentence; ties go to the lowest index."""
    chunks = np.asarray(chunks)
    if chunks.ndim == 1:
        chunks = chunks[None]
    if len(chunks) == 0:
        raise ValueError("a sentence needs at least one chunk")
    return vote(predict_posteriors(network, chunks))


def vote(posteriors):
    mean = np.asarray(posteriors).mean(axis=0)
    return int(np.argmax(mean)), mean


def sentence_error_rate(network, chunk_set):
    """CER over the sentences of a :class:`~sincnet.dataio.ChunkSet`."""
    post = predict_posteriors(network, chunk_set.chunks)
    preds = [vote(post[chunk_set.sentence == s])[0] for s in range(chunk_set.n_sentences)]
    return classification_error_rate(preds, chunk_set.sentence_labels)


def frame_error_rate(network, chunk_set):
    post = predict_posteriors(network, chunk_set.chunks)
    return classification_error_rate(post.argmax(axis=1), chunk_set.labels)


# ---------------------------------------------------------------------------
# configuration

_TUPLE_KEYS = {"conv_channels", "conv_lengths", "pool_widths", "fc_sizes"}


@dataclass
class TrainConfig:
    """Flat training configuration; round-trips through ``key = value`` files."""

    seed: int = 0
    lr: float = 0.001
    alpha: float = 0.95
    epsilon: float = 1e-7
    minibatch: int = 128
    epochs: int = 50
    chunk_ms: float = 200.0
    overlap_ms: float = 10.0
    random_offsets: bool = False
    checkpoint_every: int = 0
    cnn_mode: str = "sinc"
    sample_rate: int = 16000
    n_filters: int = 80
    filter_length: int = 251
    f_min: float = 30.0
    conv_channels: tuple = (60, 60)
    conv_lengths: tuple = (5, 5)
    pool_widths: tuple = (3, 3, 3)
    fc_sizes: tuple = (2048, 2048, 2048)
    leaky_slope: float = 0.2
    dropout: float = 0.0
    dtype: str = "float64"
    manifest: str = ""
    out_dir: str = ""

    def __post_init__(self):
        for key in _TUPLE_KEYS:
            setattr(self, key, tuple(int(v) for v in getattr(self, key)))
        positive = ("lr", "epsilon", "minibatch", "epochs", "chunk_ms", "sample_rate",
                    "n_filters", "filter_length")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigurationError(f"{key} must be positive, got {getattr(self, key)!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 <= self.overlap_ms < self.chunk_ms:
            raise ConfigurationError("overlap_ms must be non-negative and smaller than chunk_ms")
        if self.cnn_mode not in ("sinc", "standard"):
            raise ConfigurationError(f"cnn_mode must be 'sinc' or 'standard', got {self.cnn_mode!r}")
        if self.minibatch < 2:
            raise ConfigurationError("minibatch must hold at least 2 chunks (batch normalization)")

    @property
    def chunk_samples(self):
        return int(round(self.chunk_ms * self.sample_rate / 1000.0))

    def model_config(self):
        return ModelConfig(
            mode=self.cnn_mode, sample_rate=self.sample_rate, input_samples=self.chunk_samples,
            n_filters=self.n_filters, filter_length=self.filter_length, f_min=self.f_min,
            conv_channels=self.conv_channels, conv_lengths=self.conv_lengths,
            pool_widths=self.pool_widths, fc_sizes=self.fc_sizes,
            leaky_slope=self.leaky_slope, dropout=self.dropout, dtype=self.dtype)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, **overrides):
        values = parse_config_text(text)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        defaults = cls()
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigurationError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, getattr(defaults, key))
        return cls(**kwargs)


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key!r}: {raw!r}") from None
    return raw


def load_config(path, **overrides):
    return TrainConfig.from_text(Path(path).read_text(), **overrides)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_fer: float
    eval_fer: float | None = None

    def csv_row(self):
        eval_fer = "" if self.eval_fer is None else f"{self.eval_fer:.4f}"
        return f"{self.epoch},{self.loss:.6f},{self.train_fer:.4f},{eval_fer}"


LOG_HEADER = "epoch,loss,train_fer,eval_fer"


def write_log(path, logs):
    with open(path, "w") as fh:
        fh.write(LOG_HEADER + "\n")
        for entry in logs:
            fh.write(entry.csv_row() + "\n")


def read_log(path):
    logs = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != LOG_HEADER:
            raise ValueError(f"{path}: unexpected log header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            epoch, loss, train_fer, eval_fer = line.strip().split(",")
            logs.append(EpochLog(int(epoch), float(loss), float(train_fer),
                                 float(eval_fer) if eval_fer else None))
    return logs


def _param_norms(network):
    return {key: float(np.linalg.norm(p)) for key, p in network.parameters().items()}


def train(network, train_set, config, eval_set=None, log_path=None, checkpoint_dir=None,
          checkpoint_meta=None, epoch_callback=None):
    """Train ``network`` in place; returns ``(network, [EpochLog, ...])``.

    Shuffling uses ``config.seed`` so identical inputs give identical logs.
    """
    if len(train_set.chunks) == 0:
        raise ConfigurationError("training set is empty")
    rng = np.random.default_rng(config.seed)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    optimizer = RMSprop(config.lr, config.alpha, config.epsilon)
    logs = []
    for epoch in range(1, config.epochs + 1):
        if config.random_offsets:
            chunks, labels = train_set.random_chunks(rng)
        else:
            chunks, labels = train_set.chunks, train_set.labels
        order = rng.permutation(len(chunks))
        total_loss = 0.0
        errors = 0
        seen = 0
        for b, start in enumerate(range(0, len(order), config.minibatch)):
            idx = order[start:start + config.minibatch]
            if len(idx) < 2:
                continue
            x, y = chunks[idx], labels[idx]
            post = network.forward(x, training=True)
            loss, grad = cross_entropy(post, y)
            if not np.isfinite(loss):
                norms = _param_norms(network)
                worst = max(norms, key=lambda k: norms[k] if np.isfinite(norms[k]) else np.inf)
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b}; "
                    f"largest parameter norm {worst}={norms[worst]}")
            network.backward(grad)
            optimizer.step(network.parameters(), network.gradients())
            total_loss += loss * len(idx)
            errors += int(np.sum(post.argmax(axis=1) != y))
            seen += len(idx)
        entry = EpochLog(epoch, total_loss / seen, 100.0 * errors / seen)
        if eval_set is not None:
            entry.eval_fer = frame_error_rate(network, eval_set)
        logs.append(entry)
        log.info("epoch %d loss %.4f train_fer %.2f eval_fer %s", epoch, entry.loss,
                 entry.train_fer, entry.eval_fer)
        if log_path is not None:
            write_log(log_path, logs)
        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch:04d}.snc", network,
                            epoch=epoch, **(checkpoint_meta or {}))
        if epoch_callback is not None:
            epoch_callback(epoch, network, entry)
    return network, logs
