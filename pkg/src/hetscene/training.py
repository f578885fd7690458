"""Losses, Adam, metrics, the supervised training loop, and checkpoint I/O.

Training is a pure function of (config, dataset, seed): batch order, weight
initialization and dropout all derive from the seed, so repeated runs are
bitwise identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .graph import disjoint_union


class ContractError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# losses


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_loss(logits, labels):
    """Mean binary cross-entropy in the stable logit form.

    ``logits`` is a Tensor (flattened), ``labels`` an array of 0/1.
    """
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=z.dtype).reshape(-1)
    if z.size == 0:
        raise ContractError("bce_loss on an empty batch")
    if z.size != y.size:
        raise ContractError(f"{z.size} logits vs {y.size} labels")
    # softplus(z) - z*y == -[y log s(z) + (1-y) log(1-s(z))]
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean(), dtype=z.dtype)

    def vjp(g):
        return (g * (_sigmoid(z) - y) / z.size).reshape(logits.shape)

    return ad.record_op(out, (logits,), (vjp,))


def cross_entropy_loss(logits, labels):
    """Mean negative log-softmax of the true class, stable via max subtraction."""
    z = logits.data
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z.ndim != 2 or z.shape[0] != y.size:
        raise ContractError(f"logit shape {z.shape} vs {y.size} labels")
    if z.size == 0:
        raise ContractError("cross_entropy_loss on an empty batch")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ContractError(f"label out of range [0, {z.shape[1]})")
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    out = np.asarray((lse - z[np.arange(y.size), y]).mean(), dtype=z.dtype)

    def vjp(g):
        soft = np.exp(z - m)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(y.size), y] -= 1.0
        return g * soft / y.size

    return ad.record_op(out, (logits,), (vjp,))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState):
    """One update over ``params`` (dict name -> Tensor) using their .grad.

    Parameters without a gradient this step keep their value but their
    moments still decay consistently (grad treated as zero).
    """
    for name, p in params.items():
        g = p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise ad.NumericError(f"NaN/Inf gradient for {name}; step aborted")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricReport:
    f1: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self):
        return {"f1": self.f1, "accuracy": self.accuracy,
                "confusion": {"tp": self.tp, "fp": self.fp,
                              "tn": self.tn, "fn": self.fn}}


def compute_metrics(predictions, labels) -> MetricReport:
    pred = np.asarray(predictions).reshape(-1).astype(int)
    y = np.asarray(labels).reshape(-1).astype(int)
    if pred.size == 0 or pred.size != y.size:
        raise ContractError("compute_metrics needs equal nonempty inputs")
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return MetricReport(f1=f1, accuracy=(tp + tn) / pred.size,
                        tp=tp, fp=fp, tn=tn, fn=fn)


def summarize(values):
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


# ---------------------------------------------------------------------------
# scene training loop


@dataclass
class LabeledGraph:
    graph: object
    labels: dict  # task -> per-agent array, NaN where unlabeled


@dataclass
class SplitDataset:
    train: list
    val: list
    test: list


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    threshold: float = 0.5


def _task_list(task):
    if task == "both":
        return ["parked", "ghost"]
    if task in ("parked", "ghost"):
        return [task]
    raise ContractError(f"unknown task {task!r}")


def _batch_loss(model, graphs, tasks, training, rng):
    union = disjoint_union([lg.graph for lg in graphs])
    logits = enc.forward(union, model, tasks=tasks, training=training, rng=rng)
    total = None
    any_labels = False
    for task in tasks:
        labels = np.concatenate([lg.labels[task] for lg in graphs])
        mask = np.flatnonzero(~np.isnan(labels))
        if mask.size == 0:
            continue
        any_labels = True
        masked = ad.gather_rows(logits[task], mask)
        loss = bce_loss(masked, labels[mask])
        total = loss if total is None else ad.add(total, loss)
    return total, any_labels


def predict(model, data, task, threshold=0.5, batch_size=64):
    """Thresholded predictions and labels over labeled agents of a split.

    Scenes are evaluated in disjoint-union batches; batching invariance of
    the model makes this equivalent to per-scene evaluation.
    """
    preds, labels = [], []
    for start in range(0, len(data), batch_size):
        chunk = data[start:start + batch_size]
        union = disjoint_union([lg.graph for lg in chunk])
        out = enc.forward(union, model, tasks=(task,), training=False)
        prob = _sigmoid(out[task].data.reshape(-1))
        lab = np.concatenate([lg.labels[task] for lg in chunk])
        mask = ~np.isnan(lab)
        preds.append((prob[mask] > threshold).astype(int))
        labels.append(lab[mask].astype(int))
    return np.concatenate(preds), np.concatenate(labels)


def evaluate(model, data, task, threshold=0.5) -> MetricReport:
    preds, labels = predict(model, data, task, threshold)
    return compute_metrics(preds, labels)


def train(cfg: enc.EncoderConfig, data: SplitDataset, task, seed,
          train_cfg: TrainConfig = None, log=None):
    """Train a scene model; returns (model, {task: test MetricReport}).

    Mini-batches are disjoint unions of scene graphs; agents without a label
    for a task are masked out of that task's loss.  The checkpoint with the
    best validation F1 (mean across tasks for multi-task runs) is selected.
    """
    train_cfg = train_cfg or TrainConfig()
    tasks = _task_list(task)
    cfg = enc.EncoderConfig(**{**cfg.to_dict(), "tasks": tuple(tasks)})
    if not any(np.any(~np.isnan(lg.labels[t]))
               for t in tasks for lg in data.train):
        raise ContractError("no labeled agents for task(s) " + ",".join(tasks))
    model = enc.build_scene_model(cfg, seed=seed)
    model.normalizer = enc.fit_normalizer([lg.graph for lg in data.train])
    params = model.tensors()
    state = AdamState(lr=train_cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0]))
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0B]))
    best = (-1.0, None)
    for epoch in range(train_cfg.epochs):
        idx = order_rng.permutation(len(data.train))
        for start in range(0, len(idx), train_cfg.batch_size):
            batch = [data.train[i] for i in idx[start:start + train_cfg.batch_size]]
            ad.zero_grads(params.values())
            with ad.Tape() as tape:
                loss, any_labels = _batch_loss(model, batch, tasks, True, rng)
            if not any_labels:
                continue
            ad.backward(tape, loss)
            adam_step(params, state)
        val_f1 = float(np.mean([
            evaluate(model, data.val, t, train_cfg.threshold).f1 for t in tasks]))
        if log:
            log(epoch, val_f1)
        if val_f1 > best[0]:
            best = (val_f1, {k: p.data.copy() for k, p in params.items()})
    if best[1] is not None:
        for k, p in params.items():
            p.data = best[1][k]
    reports = {t: evaluate(model, data.test, t, train_cfg.threshold)
               for t in tasks}
    return model, reports


# ---------------------------------------------------------------------------
# checkpoint I/O: [u32 manifest length][manifest JSON][raw little-endian f32]


def write_params(path, tensors, config):
    entries = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name].data, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape),
                        "dtype": "f32", "offset": offset})
        blobs.append(data.tobytes())
        offset += len(blobs[-1])
    manifest = json.dumps({"tensors": entries, "config": config},
                          sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def read_params(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated container")
    (mlen,) = struct.unpack("<I", raw[:4])
    try:
        manifest = json.loads(raw[4:4 + mlen])
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from None
    data = raw[4 + mlen:]
    tensors = {}
    for ent in manifest["tensors"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        tensors[ent["name"]] = arr.reshape(shape).copy()
    return tensors, manifest["config"]


def save_checkpoint(model: enc.SceneModel, path):
    tensors = dict(model.tensors())
    if model.normalizer:
        for key, (mean, std) in model.normalizer.items():
            stem = "norm." + ".".join(key)
            tensors[stem + ".mean"] = ad.Tensor(np.asarray(mean))
            tensors[stem + ".std"] = ad.Tensor(np.asarray(std))
    write_params(path, tensors, model.config.to_dict())


def load_checkpoint(path) -> enc.SceneModel:
    tensors, config = read_params(path)
    norm = {}
    for name in [n for n in tensors if n.startswith("norm.")]:
        arr = tensors.pop(name)
        parts = name.split(".")
        key, stat = tuple(parts[1:-1]), parts[-1]
        norm.setdefault(key, [None, None])[0 if stat == "mean" else 1] = arr
    model = enc.build_scene_model(enc.EncoderConfig.from_dict(config), seed=0)
    if norm:
        model.normalizer = {k: tuple(v) for k, v in norm.items()}
    params = model.tensors()
    if set(params) != set(tensors):
        missing = set(params) ^ set(tensors)
        raise CheckpointError(f"{path}: tensor set mismatch: {sorted(missing)}")
    for name, p in params.items():
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {p.data.shape}")
        p.data = tensors[name].astype(p.data.dtype)
    return model
