"""Feed-forward networks with hand-written backpropagation.

Single-task nets map stacked spectral frames to one K-dimensional target;
multi-task nets add a sigmoid SPP head that shares the first layer(s).  The
multi-task loss is either a fixed weighted sum of the task losses or the
uncertainty-weighted form

    exp(-s1) * L1 + exp(-s2) * L2 + (s1 + s2) / 2,      s_i = ln(sigma_i^2)

whose log-variances are learned with the network weights.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

ARCHITECTURES = ("a", "b", "c", "d", "e")
LOSS_MODES = ("single", "multi-fixed", "multi-adaptive")
BCE_CLAMP = 1e-7


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# architecture and model

@dataclass(frozen=True)
class Architecture:
    """Hidden widths of the shared trunk and of each head (output layer implied)."""

    input_dim: int
    output_dim: int
    shared_layers: tuple
    task1_layers: tuple = ()
    task2_layers: tuple | None = None
    task1_activation: str = "linear"
    name: str = ""

    def __post_init__(self):
        if not self.shared_layers:
            raise ValueError("at least one shared hidden layer is required")
        if self.task1_activation not in ("linear", "sigmoid"):
            raise ValueError(f"unsupported output activation {self.task1_activation!r}")

    @property
    def multitask(self) -> bool:
        return self.task2_layers is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shared_layers"] = list(self.shared_layers)
        d["task1_layers"] = list(self.task1_layers)
        d["task2_layers"] = None if self.task2_layers is None else list(self.task2_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        t2 = d.get("task2_layers")
        return cls(int(d["input_dim"]), int(d["output_dim"]), tuple(d["shared_layers"]),
                   tuple(d.get("task1_layers", ())), None if t2 is None else tuple(t2),
                   d.get("task1_activation", "linear"), d.get("name", ""))


def make_architecture(name: str, n_units: int, input_dim: int, output_dim: int,
                      task1_activation: str = "linear") -> Architecture:
    """One of the five layouts (a)-(e); (a), (b) are single-task."""
    n = int(n_units)
    layouts = {
        "a": ((n,), (), None),
        "b": ((n, n), (), None),
        "c": ((n,), (), ()),
        "d": ((n, n), (), ()),
        "e": ((n,), (n,), (n,)),
    }
    try:
        shared, t1, t2 = layouts[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}") from None
    return Architecture(input_dim, output_dim, shared, t1, t2, task1_activation, name)


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray
    activation: str  # relu | linear | sigmoid


@dataclass
class MlpModel:
    arch: Architecture
    shared: list
    head1: list
    head2: list | None
    mean: np.ndarray
    std: np.ndarray
    log_vars: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def multitask(self) -> bool:
        return self.head2 is not None

    def named_layers(self):
        for i, layer in enumerate(self.shared):
            yield f"shared{i}", layer
        for i, layer in enumerate(self.head1):
            yield f"head1_{i}", layer
        for i, layer in enumerate(self.head2 or ()):
            yield f"head2_{i}", layer

    def parameters(self) -> dict:
        """Name -> array (live references, not copies)."""
        params = {}
        for name, layer in self.named_layers():
            params[f"{name}.W"] = layer.W
            params[f"{name}.b"] = layer.b
        if self.log_vars is not None:
            params["log_vars"] = self.log_vars
        return params

    def astype(self, dtype) -> "MlpModel":
        m = copy.deepcopy(self)
        for _, layer in m.named_layers():
            layer.W = layer.W.astype(dtype)
            layer.b = layer.b.astype(dtype)
        m.mean = m.mean.astype(dtype)
        m.std = m.std.astype(dtype)
        if m.log_vars is not None:
            m.log_vars = m.log_vars.astype(dtype)
        return m


def _init_layers(rng, in_dim, widths, out_dim, out_activation):
    layers = []
    dims = [in_dim, *widths, out_dim]
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = math.sqrt(6.0 / fan_in)
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        act = out_activation if i == len(dims) - 2 else "relu"
        layers.append(Dense(W, np.zeros(fan_out), act))
    return layers


def init_model(arch: Architecture, seed: int = 0, mean=None, std=None) -> MlpModel:
    """He-uniform weights, zero biases, log-variances at 0 for multi-task nets.

    Layers are drawn trunk, head 1, head 2 from one stream, so the trunk and
    first head match the single-task net built with the same seed.
    """
    rng = np.random.default_rng([seed, 0x1417])
    trunk_dims = list(arch.shared_layers)
    shared = _init_layers(rng, arch.input_dim, trunk_dims[:-1], trunk_dims[-1], "relu")
    head1 = _init_layers(rng, trunk_dims[-1], list(arch.task1_layers), arch.output_dim, arch.task1_activation)
    head2 = None
    log_vars = None
    if arch.multitask:
        head2 = _init_layers(rng, trunk_dims[-1], list(arch.task2_layers), arch.output_dim, "sigmoid")
        log_vars = np.zeros(2)
    mean = np.zeros(arch.input_dim) if mean is None else np.asarray(mean, dtype=float)
    std = np.ones(arch.input_dim) if std is None else np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise ValueError("normalisation std entries must be positive")
    return MlpModel(arch, shared, head1, head2, mean, std, log_vars)


# --------------------------------------------------------------------------
# forward / losses / backward

def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0)
    if act == "sigmoid":
        return expit(z)
    return z


def _run(layers, h, cache):
    for layer in layers:
        cache.append(h)
        h = _activate(h @ layer.W + layer.b, layer.activation)
    return h


def _forward_cached(model: MlpModel, batch):
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != model.arch.input_dim:
        raise ValueError(f"expected batch of shape (B, {model.arch.input_dim}), got {batch.shape}")
    x = batch - model.mean
    x /= model.std
    trunk_cache, c1, c2 = [], [], []
    h = _run(model.shared, x, trunk_cache)
    out1 = _run(model.head1, h, c1)
    out2 = _run(model.head2, h, c2) if model.multitask else None
    return out1, out2, (h, trunk_cache, c1, c2)


def forward(model: MlpModel, batch):
    """Primary output (B x K) and, for multi-task nets, the SPP output."""
    out1, out2, _ = _forward_cached(model, batch)
    return out1, out2


def predict(model: MlpModel, batch, chunk: int = 4096) -> np.ndarray:
    batch = np.asarray(batch)
    outs = [forward(model, batch[i:i + chunk])[0] for i in range(0, batch.shape[0], chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, model.arch.output_dim))


def loss_mse(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_bce(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1 - BCE_CLAMP)
    return float(np.mean(-(target * np.log(p) + (1 - target) * np.log1p(-p))))


def loss_multitask_fixed(l1, l2, lambda1=1.0, lambda2=1.0) -> float:
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda1 * l1 + lambda2 * l2


def loss_multitask_adaptive(l1, l2, s1, s2) -> float:
    return math.exp(-s1) * l1 + math.exp(-s2) * l2 + 0.5 * (s1 + s2)


def _flush_subnormals(g):
    # saturated sigmoids produce subnormal gradients, which make the BLAS
    # kernels several times slower; they carry no usable signal
    g[np.abs(g) < np.finfo(g.dtype).tiny] = 0
    return g


def _mse_grad_z(out, target, act):
    g = 2.0 * (out - target) / out.size
    if act == "sigmoid":
        g = _flush_subnormals(g * out * (1.0 - out))
    return g


def _bce_grad_z(out, target):
    # d/dz of the clamped BCE through a sigmoid output
    inside = (out > BCE_CLAMP) & (out < 1 - BCE_CLAMP)
    return _flush_subnormals(np.where(inside, (out - target) / out.size, 0.0).astype(out.dtype, copy=False))


def _back(layers, cache, g, grads, prefix, need_input_grad=True):
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        h_in = cache[i]
        grads[f"{prefix}{i}.W"] = h_in.T @ g
        grads[f"{prefix}{i}.b"] = g.sum(axis=0)
        if i == 0 and not need_input_grad:
            return None
        g = g @ layer.W.T
        if i > 0:
            np.multiply(g, h_in > 0, out=g)
    return g


@dataclass(frozen=True)
class LossSpec:
    mode: str = "single"
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}; expected one of {LOSS_MODES}")


def loss_and_grads(model: MlpModel, batch, target1, target2=None, loss: LossSpec = LossSpec()):
    """Composite loss, its parts, and exact gradients for every parameter."""
    out1, out2, (h, trunk_cache, c1, c2) = _forward_cached(model, batch)
    act1 = model.head1[-1].activation
    l1 = loss_mse(out1, target1)
    g1 = _mse_grad_z(out1, np.asarray(target1), act1)
    grads = {}
    parts = {"l1": l1}
    if loss.mode == "single":
        if model.multitask:
            raise ValueError("single-task loss used with a multi-task model")
        total = l1
    else:
        if not model.multitask or target2 is None:
            raise ValueError("multi-task loss needs a multi-task model and SPP targets")
        l2 = loss_bce(out2, target2)
        g2 = _bce_grad_z(out2, np.asarray(target2))
        parts["l2"] = l2
        if loss.mode == "multi-fixed":
            w1, w2 = loss.lambda1, loss.lambda2
            total = loss_multitask_fixed(l1, l2, w1, w2)
        else:
            s1, s2 = float(model.log_vars[0]), float(model.log_vars[1])
            w1, w2 = math.exp(-s1), math.exp(-s2)
            total = loss_multitask_adaptive(l1, l2, s1, s2)
            grads["log_vars"] = np.array([-w1 * l1 + 0.5, -w2 * l2 + 0.5], dtype=model.log_vars.dtype)
        g1 = w1 * g1
        g2 = w2 * g2
    gh = _back(model.head1, c1, g1, grads, "head1_")
    # head input is post-ReLU trunk output
    if model.multitask:
        gh += _back(model.head2, c2, g2, grads, "head2_")
    np.multiply(gh, h > 0, out=gh)
    _back(model.shared, trunk_cache, gh, grads, "shared", need_input_grad=False)
    if model.log_vars is not None and "log_vars" not in grads:
        grads["log_vars"] = np.zeros_like(model.log_vars)
    parts["total"] = total
    return total, parts, grads


def backward(model: MlpModel, batch, target1, target2=None, loss: LossSpec = LossSpec()) -> dict:
    return loss_and_grads(model, batch, target1, target2, loss)[2]


# --------------------------------------------------------------------------
# optimiser

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    scratch: dict = field(default_factory=dict, repr=False)
    masks: dict = field(default_factory=dict, repr=False)


ADAM_CHUNK = 1 << 15
FLUSH_EVERY = 16


def is_decayed(name: str) -> bool:
    """Weight decay applies to weight matrices only (not biases or log-variances)."""
    return name.endswith(".W")


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam with L2 decay added to the weight gradients."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    # bias correction folded into the step size and epsilon
    step = lr * math.sqrt(c2) / c1
    eps_hat = eps * math.sqrt(c2)
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.scratch[name] = np.empty(min(p.size, ADAM_CHUNK), dtype=p.dtype)
            state.masks[name] = np.empty(min(p.size, ADAM_CHUNK), dtype=bool)
        if weight_decay and is_decayed(name):
            g = g + weight_decay * p
        m, v, buf, mask = state.m[name].reshape(-1), state.v[name].reshape(-1), state.scratch[name], state.masks[name]
        tiny = np.finfo(p.dtype).tiny
        # products of two values below sqrt(tiny) underflow
        small = math.sqrt(tiny)
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        # cache-sized slices keep the dozen elementwise passes out of main memory
        for s in range(0, flat_p.size, ADAM_CHUNK):
            sl = slice(s, s + ADAM_CHUNK)
            mc, vc, gc = m[sl], v[sl], flat_g[sl]
            tmp = buf[:mc.size]
            np.subtract(gc, mc, out=tmp)
            tmp *= 1.0 - beta1
            mc += tmp
            np.multiply(gc, gc, out=tmp)
            tmp -= vc
            tmp *= 1.0 - beta2
            vc += tmp
            np.sqrt(vc, out=tmp)
            tmp += eps_hat
            np.divide(mc, tmp, out=tmp)
            tmp *= step
            pc = flat_p[sl]
            pc -= tmp
            if t % FLUSH_EVERY:
                continue
            # weights of dead units and their momentum decay towards zero and
            # end up producing subnormals, which slow every later matmul by
            # orders of magnitude; once zeroed they stay zero, so an
            # occasional sweep is enough
            for arr, floor in ((pc, small), (mc, small), (vc, tiny)):
                np.abs(arr, out=tmp)
                np.less(tmp, floor, out=mask[:arr.size])
                np.copyto(arr, 0, where=mask[:arr.size])
    return state


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    hidden_units: tuple = (500, 1000, 1500)
    learning_rates: tuple = (1e-3, 1e-4)
    weight_decays: tuple = (0.0, 1e-3)
    architectures: tuple = ("a", "b")
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    loss_mode: str = "single"
    lambda1: float = 1.0
    lambda2: float = 1.0
    selection: str = "primary"  # or "composite"
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("hidden_units", "learning_rates", "weight_decays", "architectures"):
            if not getattr(self, name):
                raise ValueError(f"{name} grid must not be empty")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        LossSpec(self.loss_mode, self.lambda1, self.lambda2)
        multi = self.loss_mode != "single"
        for a in self.architectures:
            if a not in ARCHITECTURES:
                raise ValueError(f"unknown architecture {a!r}")
            if multi != (a in ("c", "d", "e")):
                raise ValueError(f"architecture {a!r} does not match loss mode {self.loss_mode!r}")
        if self.selection not in ("primary", "composite"):
            raise ValueError("selection must be 'primary' or 'composite'")

    @property
    def loss(self) -> LossSpec:
        return LossSpec(self.loss_mode, self.lambda1, self.lambda2)

    def cells(self):
        i = 0
        for arch in self.architectures:
            for nu in self.hidden_units:
                for lr in self.learning_rates:
                    for wd in self.weight_decays:
                        yield i, {"arch": arch, "hidden_units": int(nu), "lr": float(lr), "weight_decay": float(wd)}
                        i += 1


class ArrayData:
    """In-memory (inputs, target[, secondary]) with the ``inputs(idx)`` protocol."""

    def __init__(self, inputs, target, secondary=None):
        self.x = np.asarray(inputs)
        self.target = np.asarray(target)
        self.secondary = None if secondary is None else np.asarray(secondary)
        if self.x.shape[0] != self.target.shape[0]:
            raise ValueError("inputs and targets have different row counts")

    def __len__(self):
        return self.x.shape[0]

    @property
    def input_dim(self):
        return self.x.shape[1]

    def inputs(self, idx):
        return self.x[idx]

    def feature_moments(self):
        x = self.x.astype(np.float64)
        return x.mean(axis=0), x.std(axis=0)


def evaluate(model: MlpModel, data, loss: LossSpec = LossSpec(), chunk: int = 8192) -> dict:
    """Mean primary MSE (and SPP BCE / composite loss for multi-task models) over ``data``."""
    n = len(data)
    se = 0.0
    ce = 0.0
    count = 0
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        xb = data.inputs(idx).astype(model.mean.dtype, copy=False)
        o1, o2 = forward(model, xb)
        t1 = data.target[idx]
        se += float(np.sum((o1 - t1) ** 2, dtype=np.float64))
        if o2 is not None and data.secondary is not None:
            p = np.clip(o2, BCE_CLAMP, 1 - BCE_CLAMP)
            t2 = data.secondary[idx]
            ce += float(np.sum(-(t2 * np.log(p) + (1 - t2) * np.log1p(-p)), dtype=np.float64))
        count += o1.size
    out = {"mse": se / count}
    if model.multitask and data.secondary is not None:
        out["bce"] = ce / count
        if loss.mode == "multi-fixed":
            out["composite"] = loss_multitask_fixed(out["mse"], out["bce"], loss.lambda1, loss.lambda2)
        elif loss.mode == "multi-adaptive":
            s1, s2 = (float(s) for s in model.log_vars)
            out["composite"] = loss_multitask_adaptive(out["mse"], out["bce"], s1, s2)
    out.setdefault("composite", out["mse"])
    return out


def _normalisation(data):
    mean, std = data.feature_moments()
    std = np.where(std > 1e-12 * max(float(np.max(std)), 1e-300), std, 1.0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def train_cell(train_data, val_data, cfg: TrainConfig, cell: dict, input_dim: int, output_dim: int,
               task1_activation: str, mean, std, log=None, cell_id: int = 0):
    """One grid cell; returns (best_snapshot, best_val, best_epoch) or raises FloatingPointError."""
    arch = make_architecture(cell["arch"], cell["hidden_units"], input_dim, output_dim, task1_activation)
    dtype = np.dtype(cfg.dtype)
    model = init_model(arch, cfg.seed, mean, std).astype(dtype)
    loss = cfg.loss
    multi = arch.multitask
    if multi and train_data.secondary is None:
        raise ValueError("multi-task training needs SPP targets")
    params = model.parameters()
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 0x5A1F])
    n = len(train_data)
    best = (None, math.inf, 0)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            xb = train_data.inputs(idx).astype(dtype, copy=False)
            t1 = train_data.target[idx].astype(dtype, copy=False)
            t2 = train_data.secondary[idx].astype(dtype, copy=False) if multi else None
            value, _, grads = loss_and_grads(model, xb, t1, t2, loss)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            total += value * idx.size
            adam_step(params, grads, state, cell["lr"], cell["weight_decay"])
        train_loss = total / n
        scores = evaluate(model, val_data, loss)
        val = scores["mse"] if cfg.selection == "primary" else scores["composite"]
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        if log is not None:
            log.append({"cell": cell_id, "epoch": epoch, "train_loss": train_loss, "val_loss": val})
        logger.debug("cell %d epoch %d train %.6g val %.6g", cell_id, epoch, train_loss, val)
        if val < best[1]:
            best = (model.astype(np.float64), val, epoch)
    return best


def train(train_data, val_data, cfg: TrainConfig, target_kind: str = "gain", log=None,
          extra_meta: dict | None = None) -> MlpModel:
    """Grid sweep; returns the snapshot with the lowest validation loss.

    ``log`` (a list) receives one dict per (cell, epoch).  Cells whose loss goes
    non-finite are abandoned and listed in ``model.meta["failed_cells"]``.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation data must be non-empty")
    input_dim = train_data.input_dim
    output_dim = train_data.target.shape[1]
    bounded = target_kind in ("gain", "spp")
    act = "sigmoid" if bounded else "linear"
    mean, std = _normalisation(train_data)
    winner = None
    failed = []
    for cell_id, cell in cfg.cells():
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                snap, val, epoch = train_cell(train_data, val_data, cfg, cell, input_dim, output_dim,
                                              act, mean, std, log, cell_id)
        except FloatingPointError as exc:
            failed.append({"cell": cell_id, **cell, "reason": str(exc)})
            logger.warning("grid cell %d %s abandoned: %s", cell_id, cell, exc)
            continue
        if winner is None or val < winner[1]:
            winner = (snap, val, epoch, cell_id, cell)
    if winner is None:
        raise TrainingError(f"every grid cell failed: {failed}")
    model, val, epoch, cell_id, cell = winner
    model.meta = {
        "target_kind": target_kind,
        "loss_mode": cfg.loss_mode,
        "lambda1": cfg.lambda1,
        "lambda2": cfg.lambda2,
        "selection": cfg.selection,
        "cell": cell_id,
        **cell,
        "epoch": epoch,
        "val_loss": val,
        "failed_cells": failed,
        "seed": cfg.seed,
        **(extra_meta or {}),
    }
    return model


# --------------------------------------------------------------------------
# serialisation

MODEL_MAGIC = b"MTLSEMDL"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelChecksumError(ModelFormatError):
    pass


def _arrays(model: MlpModel):
    arrays = [(name, np.asarray(arr, dtype=np.float64)) for name, arr in model.parameters().items()]
    arrays.append(("norm.mean", np.asarray(model.mean, dtype=np.float64)))
    arrays.append(("norm.std", np.asarray(model.std, dtype=np.float64)))
    return arrays


def save_model(model: MlpModel, path) -> None:
    """Magic, version, JSON header, float64 LE payload, CRC32 of all preceding bytes."""
    arrays = _arrays(model)
    header = {
        "architecture": model.arch.to_dict(),
        "activations": {name: layer.activation for name, layer in model.named_layers()},
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
        "meta": model.meta,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<II", MODEL_VERSION, len(hbytes)))
    buf.write(hbytes)
    for _, arr in arrays:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    if len(raw) < len(MODEL_MAGIC) + 12:
        raise ModelChecksumError(f"{path}: truncated model file")
    version, hlen = struct.unpack_from("<II", raw, len(MODEL_MAGIC))
    if version != MODEL_VERSION:
        raise ModelVersionError(f"{path}: model format version {version} is not supported (expected {MODEL_VERSION})")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ModelChecksumError(f"{path}: checksum mismatch (corrupt or truncated file)")
    start = len(MODEL_MAGIC) + 8
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    pos = start + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(body):
        raise ModelFormatError(f"{path}: payload length mismatch")
    arch = Architecture.from_dict(header["architecture"])
    acts = header["activations"]
    groups = {"shared": [], "head1_": [], "head2_": []}
    for key in sorted(acts, key=lambda k: (k.rstrip("0123456789"), int(k[len(k.rstrip("0123456789")):]))):
        prefix = key.rstrip("0123456789")
        groups[prefix].append(Dense(arrays[f"{key}.W"], arrays[f"{key}.b"], acts[key]))
    return MlpModel(arch, groups["shared"], groups["head1_"], groups["head2_"] if arch.multitask else None,
                    arrays["norm.mean"], arrays["norm.std"], arrays.get("log_vars"), header["meta"])
