"""Embedding network plus the small classification head.

The backbone is a plain MLP ending in a linear map to the embedding space.
The head is linear d->d, batch norm, leaky ReLU, linear d->(C+1). Softmax
index 0 is reserved for the outlier label -1; index i maps to label i-1.
"""

from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import BatchSizeError, CheckpointError, ConfigError, DimensionError
from .numerics import Tensor

CHECKPOINT_MAGIC = b"QNM1"
CHECKPOINT_VERSION = 1


class EmbeddingDimWarning(UserWarning):
    pass


@dataclass
class ModelConfig:
    input_dim: int
    embed_dim: int
    num_classes: int
    backbone_hidden: list[int] = field(default_factory=lambda: [64])
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError("must be positive", "model.input_dim")
        if self.embed_dim < 2:
            raise ConfigError(f"embedding dimension must be >= 2, got {self.embed_dim}", "model.embed_dim")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}", "model.num_classes")
        if any(int(h) < 1 for h in self.backbone_hidden):
            raise ConfigError("hidden widths must be positive", "model.backbone_hidden")
        if not self.leaky_slope > 0:
            raise ConfigError("must be > 0", "model.leaky_slope")
        if not 0 < self.bn_momentum < 1:
            raise ConfigError("must lie in (0, 1)", "model.bn_momentum")
        if not self.bn_eps > 0:
            raise ConfigError("must be > 0", "model.bn_eps")


def label_to_index(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64) + 1


def index_to_label(indices) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64) - 1


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return nx.add_bias(nx.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class BatchNormLayer:
    def __init__(self, width: int, momentum: float, eps: float, name: str):
        self.gamma = Tensor(np.ones(width), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(width), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training:
            out, _, _ = nx.batch_norm(x, self.gamma, self.beta, self.eps, (self.running_mean, self.running_var))
            return out
        n = x.shape[0]
        if n < 2:
            raise BatchSizeError(f"batch norm in train mode needs at least 2 rows, got {n}")
        out, mu, var = nx.batch_norm(x, self.gamma, self.beta, self.eps)
        # running variance tracks the unbiased estimate
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mu
        self.running_var = (1 - m) * self.running_var + m * var * n / (n - 1)
        return out

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


class Model:
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.training = True
        rng = np.random.default_rng(config.seed)
        widths = [config.input_dim, *[int(h) for h in config.backbone_hidden], config.embed_dim]
        self.backbone = [Linear(a, b, rng, f"backbone.{i}") for i, (a, b) in enumerate(zip(widths, widths[1:]))]
        d, k = config.embed_dim, config.num_classes + 1
        self.head_in = Linear(d, d, rng, "head.0")
        self.head_bn = BatchNormLayer(d, config.bn_momentum, config.bn_eps, "head.bn")
        self.head_out = Linear(d, k, rng, "head.1")

    @property
    def num_outputs(self) -> int:
        return self.config.num_classes + 1

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        """Trainable tensors in declaration order (also the checkpoint order)."""
        params: list[Tensor] = []
        for layer in self.backbone:
            params += layer.parameters()
        params += self.head_in.parameters() + self.head_bn.parameters() + self.head_out.parameters()
        return params

    def buffers(self) -> list[np.ndarray]:
        return [self.head_bn.running_mean, self.head_bn.running_var]

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()] + [b.copy() for b in self.buffers()]

    def load_state(self, state: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(state) != len(params) + 2:
            raise CheckpointError(f"expected {len(params) + 2} arrays, got {len(state)}")
        for p, arr in zip(params, state):
            if arr.shape != p.shape:
                raise CheckpointError(f"{p.name}: shape {arr.shape} does not match {p.shape}")
            p.data[...] = arr
        self.head_bn.running_mean = np.array(state[-2], dtype=np.float64)
        self.head_bn.running_var = np.array(state[-1], dtype=np.float64)

    def embed(self, batch: Tensor) -> Tensor:
        batch = nx.as_tensor(batch)
        if batch.data.ndim != 2 or batch.shape[1] != self.config.input_dim:
            raise DimensionError(f"embed expects B x {self.config.input_dim}, got {list(batch.shape)}")
        h = batch
        last = len(self.backbone) - 1
        for i, layer in enumerate(self.backbone):
            h = layer(h)
            if i < last:
                h = nx.leaky_relu(h, self.config.leaky_slope)
        return h

    def classify(self, embeddings: Tensor) -> Tensor:
        embeddings = nx.as_tensor(embeddings)
        d = self.config.embed_dim
        if embeddings.data.ndim != 2 or embeddings.shape[1] != d:
            raise DimensionError(f"classify expects B x {d}, got {list(embeddings.shape)}")
        if embeddings.shape[0] == 0:
            raise BatchSizeError("classify called on an empty batch")
        h = self.head_in(embeddings)
        h = self.head_bn(h, self.training)
        h = nx.leaky_relu(h, self.config.leaky_slope)
        return self.head_out(h)

    def forward(self, batch: Tensor) -> tuple[Tensor, Tensor]:
        emb = self.embed(batch)
        return emb, self.classify(emb)

    def predict(self, batch) -> np.ndarray:
        """Labels in {-1, 0, ..., C-1}; ties go to the lowest softmax index."""
        _, logits = self.forward(nx.as_tensor(batch))
        return predict_from_probs(nx.softmax(logits).data)


def predict_from_probs(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, which is the tie rule we want
    return index_to_label(np.argmax(probs, axis=1))


def init_model(config: ModelConfig) -> Model:
    config.validate()
    if config.embed_dim > config.num_classes + 1:
        warnings.warn(
            f"embedding dimension {config.embed_dim} exceeds num_classes + 1 = {config.num_classes + 1}; "
            "the head's weight matrices may be poorly conditioned",
            EmbeddingDimWarning,
            stacklevel=2,
        )
    return Model(config)


# ---------------------------------------------------------------- checkpoints
#
# layout: magic "QNM1" | version u32 | config length u64 | config JSON (utf-8)
#         | every parameter, then running mean and running var, as f64 LE


def save_checkpoint(model: Model, path) -> None:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(cfg)))
    buf.write(cfg)
    for arr in model.state():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, n = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig(**json.loads(raw[16 : 16 + n].decode("utf-8")))
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable config record ({exc})") from exc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmbeddingDimWarning)
        model = init_model(cfg)
    shapes = [p.shape for p in model.parameters()] + [b.shape for b in model.buffers()]
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    body = raw[16 + n :]
    if len(body) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes of weights, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    state, offset = [], 0
    for s in shapes:
        size = int(np.prod(s))
        state.append(flat[offset : offset + size].reshape(s))
        offset += size
    model.load_state(state)
    model.eval()
    return model
