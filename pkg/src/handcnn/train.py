"""Training loop: Adam, per-epoch learning-rate decay, loss tracing, checkpoints.

An epoch here is a fixed budget of ``iters_per_epoch`` iterations (112 by
default, so 15 epochs = 1680 iterations of batch 32), not a strict pass
over the data; the shuffled order wraps when the budget exceeds the
sample count.  Training is fully deterministic given (seed, data,
hyperparameters) in single-threaded mode.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import data, layers, network
from .errors import ConfigError, DataError, DivergenceError, FormatError, UsageError

HFCK_MAGIC = b"HFCK"
HFCK_VERSION = 1
_MOMENT_PREFIX = ("adam.m/", "adam.v/")
_STEP_NAME = "adam.t"


@dataclass(frozen=True)
class Hyperparams:
    base_lr: float = 1e-4
    lr_decay: float = 0.8
    dropout_rate: float = 0.4
    batch_size: int = 32
    epochs: int = 15
    iters_per_epoch: int = 112
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_std: float = 0.005
    seed: int = 0

    def validate(self) -> None:
        if self.base_lr <= 0 or self.adam_eps <= 0 or self.init_std <= 0:
            raise ConfigError("base_lr, adam_eps and init_std must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1 or self.epochs < 1 or self.iters_per_epoch < 1:
            raise ConfigError("batch_size, epochs and iters_per_epoch must be positive")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ConfigError("adam betas must be in [0, 1)")

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.iters_per_epoch

    def with_overrides(self, **kwargs) -> "Hyperparams":
        return replace(self, **kwargs)


@dataclass
class LossRecord:
    iteration: int   # 1-based, global across epochs
    epoch: int       # 0-based
    lr: float
    loss: float


@dataclass
class LossTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def losses(self):
        return [r.loss for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "epoch", "lr", "loss"])
            for r in self.records:
                writer.writerow([r.iteration, r.epoch, repr(r.lr), repr(r.loss)])

    @classmethod
    def from_csv(cls, path) -> "LossTrace":
        records = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["iteration", "epoch", "lr", "loss"]:
                raise DataError(f"{path}: not a loss trace CSV")
            for row in reader:
                records.append(LossRecord(int(row[0]), int(row[1]), float(row[2]), float(row[3])))
        return cls(records)


def lr_schedule(h: Hyperparams, epoch: int) -> float:
    """base_lr decayed by lr_decay once per completed epoch."""
    if not 0 <= epoch < h.epochs:
        raise UsageError(f"epoch {epoch} out of range [0, {h.epochs})")
    return h.base_lr * h.lr_decay ** epoch


def adam_step(state: network.ModelState, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> network.ModelState:
    """One Adam update, in place; the only operation that mutates a ModelState."""
    if set(grads) != set(state.params):
        missing = set(state.params).symmetric_difference(grads)
        raise UsageError(f"gradient keys do not match parameters: {sorted(missing)}")
    state.t += 1
    bias1 = 1.0 - beta1 ** state.t
    bias2 = 1.0 - beta2 ** state.t
    for key, g in grads.items():
        m = state.adam_m[key]
        v = state.adam_v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        state.params[key] -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    return state


def train(spec: network.NetworkSpec, train_set, h: Hyperparams, early_stop=None):
    """Run the full schedule; returns the trained state and per-iteration trace.

    ``early_stop``, when given, is called as ``early_stop(state, epoch)``
    after each epoch and ends training early on True; the default path is
    untouched.
    """
    h.validate()
    if not train_set:
        raise DataError("training set is empty")
    state = network.init_params(spec, h.seed, h.init_std)
    dropout_rng = np.random.default_rng([int(h.seed), 1])
    trace = LossTrace()
    iteration = 0
    for epoch in range(h.epochs):
        lr = lr_schedule(h, epoch)
        for x, y in data.batches(train_set, h.batch_size, h.seed, epoch, count=h.iters_per_epoch):
            iteration += 1
            logits, caches = network.forward_logits(state, x, training=True, rng=dropout_rng,
                                                    dropout_rate=h.dropout_rate)
            probs, loss = layers.softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at iteration {iteration}", iteration)
            grads = network.backward(state, caches, layers.softmax_cross_entropy_backward(probs, y))
            adam_step(state, grads, lr, h.adam_beta1, h.adam_beta2, h.adam_eps)
            trace.records.append(LossRecord(iteration, epoch, lr, loss))
        if early_stop is not None and early_stop(state, epoch):
            break
    return state, trace


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def save_checkpoint(state: network.ModelState, path) -> None:
    """HFCK checkpoint: parameters plus Adam moments and step count (fp32)."""
    net_id = network.NETWORK_IDS.get(state.spec.id)
    if net_id is None:
        raise UsageError(f"cannot checkpoint unknown network id {state.spec.id!r}")
    tensors = list(state.params.items())
    tensors += [(f"adam.m/{k}", v) for k, v in state.adam_m.items()]
    tensors += [(f"adam.v/{k}", v) for k, v in state.adam_v.items()]
    tensors.append((_STEP_NAME, np.array([state.t], dtype=np.float32)))
    with open(path, "wb") as f:
        f.write(HFCK_MAGIC)
        f.write(struct.pack("<I", HFCK_VERSION))
        f.write(struct.pack("<B", net_id))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(f, name, arr)


class _Reader:
    def __init__(self, f, path):
        self.f = f
        self.path = path

    def read(self, n: int) -> bytes:
        chunk = self.f.read(n)
        if len(chunk) != n:
            raise FormatError(f"{self.path}: truncated at offset {self.f.tell()}")
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(path, spec: network.NetworkSpec | None = None) -> network.ModelState:
    """Rebuild a ModelState; pass ``spec`` when the checkpoint is not a stock network."""
    with open(path, "rb") as f:
        r = _Reader(f, path)
        if r.read(4) != HFCK_MAGIC:
            raise FormatError(f"{path}: bad magic at offset 0")
        (version,) = r.unpack("<I")
        if version != HFCK_VERSION:
            raise FormatError(f"{path}: unsupported version {version} at offset 4")
        (net_byte,) = r.unpack("<B")
        ids = {v: k for k, v in network.NETWORK_IDS.items()}
        if net_byte not in ids:
            raise FormatError(f"{path}: unknown network id byte {net_byte} at offset 8")
        net_id = ids[net_byte]
        if spec is None:
            spec = network.build(net_id)
        elif spec.id != net_id:
            raise FormatError(f"{path}: checkpoint holds a {net_id!r} network, "
                              f"but a {spec.id!r} spec was requested")
        (count,) = r.unpack("<I")
        tensors = {}
        for _ in range(count):
            (name_len,) = r.unpack("<H")
            name = r.read(name_len).decode("utf-8")
            (rank,) = r.unpack("<B")
            dims = r.unpack(f"<{rank}I")
            payload = r.read(4 * int(np.prod(dims)))
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes at offset {f.tell() - 1}")
    state = network.ModelState(spec=spec)
    for name, arr in tensors.items():
        if name.startswith("adam.m/"):
            state.adam_m[name[len("adam.m/"):]] = arr
        elif name.startswith("adam.v/"):
            state.adam_v[name[len("adam.v/"):]] = arr
        elif name == _STEP_NAME:
            state.t = int(arr[0])
        else:
            state.params[name] = arr
    expected = network.param_shapes(spec)
    for key, shape in expected.items():
        got = state.params.get(key)
        if got is None or got.shape != shape:
            raise FormatError(f"{path}: parameter {key!r} missing or mis-shaped "
                              f"(got {None if got is None else got.shape}, want {shape})")
    for key in expected:
        state.adam_m.setdefault(key, np.zeros_like(state.params[key]))
        state.adam_v.setdefault(key, np.zeros_like(state.params[key]))
    return state
