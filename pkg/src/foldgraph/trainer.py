"""Adam training loop, binary checkpoints, and the linear transfer head."""

import dataclasses
import struct

import numpy as np

from . import autodiff as ad
from . import network as net
from .errors import CheckpointError, DomainError, NumericalError

LOSS_KINDS = ("augmented", "plain")

CHECKPOINT_MAGIC = b"FGCHKPT1"
CHECKPOINT_VERSION = 1


@dataclasses.dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_kind: str = "augmented"
    checkpoint_every: int = 0
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.lr < 0:
            raise DomainError("lr must be nonnegative")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise DomainError(f"loss_kind must be one of {LOSS_KINDS}")


@dataclasses.dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, named_params):
        return cls(
            m={name: np.zeros_like(p) for name, p in named_params},
            v={name: np.zeros_like(p) for name, p in named_params},
        )


def adam_step(params, grads, moments, cfg, t):
    """Bias-corrected Adam update applied in the given parameter order.

    params is a list of (name, array) pairs updated in place; grads is a
    parallel list of arrays.
    """
    if t < 1:
        raise DomainError("Adam step index starts at 1")
    for (name, value), grad in zip(params, grads):
        m = moments.m[name]
        v = moments.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    loss: float
    clip_events: int


def _epoch_order(seed, epoch, n):
    return np.random.default_rng((seed, epoch)).permutation(n)


def train(model, dataset, cfg, log_path=None, checkpoint_path=None,
          adam_state=None, start_epoch=0):
    """Minimize the batch-mean Chamfer loss over the dataset with Adam.

    Fully deterministic under (seed, data, config); the wallclock field in
    the log file is written as 0 to keep logs byte-reproducible.
    """
    if not dataset:
        raise DomainError("training dataset is empty")
    named = model.named_parameters()
    if adam_state is None:
        adam_state = AdamState.for_params([(n, p.values) for n, p in named])
    records = []
    log_fh = open(log_path, "a", newline="\n") if log_path else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            order = _epoch_order(cfg.seed, epoch, len(dataset))
            loss_sum = 0.0
            clip_events = 0
            for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
                model.zero_grad()
                batch_loss = 0.0
                for cloud in batch:
                    loss = net.reconstruction_loss(model, cloud, cfg.loss_kind)
                    value = float(loss.values)
                    if not np.isfinite(value):
                        raise NumericalError(
                            f"non-finite loss in epoch {epoch}, batch {batch_index}"
                        )
                    batch_loss += value
                    ad.backward(ad.scale(loss, 1.0 / len(batch)))
                loss_sum += batch_loss
                grads = [
                    p.grad if p.grad is not None else np.zeros_like(p.values)
                    for _, p in named
                ]
                if cfg.clip_norm > 0:
                    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
                    if total > cfg.clip_norm:
                        clip_events += 1
                        factor = cfg.clip_norm / total
                        grads = [g * factor for g in grads]
                adam_state.t += 1
                adam_step(
                    [(n, p.values) for n, p in named], grads,
                    adam_state, cfg, adam_state.t,
                )
            mean_loss = loss_sum / len(order)
            records.append(EpochRecord(epoch, mean_loss, clip_events))
            if log_fh:
                log_fh.write(f"epoch {epoch} loss {mean_loss:.17g} wallclock_s 0\n")
                log_fh.flush()
            if (
                checkpoint_path
                and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0
            ):
                save_checkpoint(checkpoint_path, model, adam_state, cfg, epoch + 1)
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, adam_state, cfg, cfg.epochs)
    return records


# ---------------------------------------------------------------------------
# checkpoints


def _config_entries(model, cfg, epoch, adam_state):
    mc = model.config
    entries = {
        "meta/epoch": np.array([epoch], dtype=np.float64),
        "meta/adam_t": np.array([adam_state.t], dtype=np.float64),
        "config/code_len": np.array([mc.code_len], dtype=np.float64),
        "config/lattice_side": np.array([mc.lattice_side], dtype=np.float64),
        "config/knn_k": np.array([mc.knn_k], dtype=np.float64),
        "config/sigma": np.array([mc.sigma]),
        "config/mu": np.array([mc.mu]),
        "config/filter_kind": np.array(
            [net.FILTER_KINDS.index(mc.filter_kind)], dtype=np.float64
        ),
        "config/encoder_point_widths": np.array(mc.encoder_point_widths, dtype=np.float64),
        "config/encoder_code_widths": np.array(mc.encoder_code_widths, dtype=np.float64),
        "config/fold_hidden": np.array([mc.fold_hidden], dtype=np.float64),
        "config/fold_inner_dim": np.array([mc.fold_inner_dim], dtype=np.float64),
        "config/topo_hidden": np.array([mc.topo_hidden], dtype=np.float64),
        "train/lr": np.array([cfg.lr]),
        "train/batch_size": np.array([cfg.batch_size], dtype=np.float64),
        "train/epochs": np.array([cfg.epochs], dtype=np.float64),
        "train/beta1": np.array([cfg.beta1]),
        "train/beta2": np.array([cfg.beta2]),
        "train/eps": np.array([cfg.eps]),
        "train/seed": np.array([cfg.seed], dtype=np.float64),
        "train/loss_kind": np.array(
            [LOSS_KINDS.index(cfg.loss_kind)], dtype=np.float64
        ),
        "train/checkpoint_every": np.array([cfg.checkpoint_every], dtype=np.float64),
        "train/clip_norm": np.array([cfg.clip_norm]),
    }
    return entries


def save_checkpoint(path, model, adam_state, cfg, epoch):
    """Little-endian binary container of every named array."""
    entries = _config_entries(model, cfg, epoch, adam_state)
    for name, p in model.named_parameters():
        entries[f"param/{name}"] = p.values
        entries[f"adam/m/{name}"] = adam_state.m[name]
        entries[f"adam/v/{name}"] = adam_state.v[name]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name, arr in entries.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError(
            f"truncated checkpoint: reading {what} at offset {fh.tell() - len(data)}"
        )
    return data


def _read_entries(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        entries = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, "extent"))[0]
                for _ in range(rank)
            )
            n_items = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, 8 * n_items, f"payload of {name}")
            entries[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"trailing bytes at offset {fh.tell() - 1}")
    return entries


@dataclasses.dataclass
class Checkpoint:
    model: net.ModelState
    adam_state: AdamState
    train_config: TrainConfig
    epoch: int


def load_checkpoint(path):
    entries = _read_entries(path)

    def scalar(name):
        if name not in entries:
            raise CheckpointError(f"missing entry {name}")
        return float(entries[name][0])

    model_config = net.ModelConfig(
        code_len=int(scalar("config/code_len")),
        lattice_side=int(scalar("config/lattice_side")),
        knn_k=int(scalar("config/knn_k")),
        sigma=scalar("config/sigma"),
        mu=scalar("config/mu"),
        filter_kind=net.FILTER_KINDS[int(scalar("config/filter_kind"))],
        encoder_point_widths=tuple(
            int(w) for w in entries["config/encoder_point_widths"]
        ),
        encoder_code_widths=tuple(
            int(w) for w in entries["config/encoder_code_widths"]
        ),
        fold_hidden=int(scalar("config/fold_hidden")),
        fold_inner_dim=int(scalar("config/fold_inner_dim")),
        topo_hidden=int(scalar("config/topo_hidden")),
    )
    cfg = TrainConfig(
        lr=scalar("train/lr"),
        batch_size=int(scalar("train/batch_size")),
        epochs=int(scalar("train/epochs")),
        beta1=scalar("train/beta1"),
        beta2=scalar("train/beta2"),
        eps=scalar("train/eps"),
        seed=int(scalar("train/seed")),
        loss_kind=LOSS_KINDS[int(scalar("train/loss_kind"))],
        checkpoint_every=int(scalar("train/checkpoint_every")),
        clip_norm=scalar("train/clip_norm"),
    )
    model = net.init_model(model_config, seed=cfg.seed)
    adam_state = AdamState.for_params(
        [(n, p.values) for n, p in model.named_parameters()]
    )
    adam_state.t = int(scalar("meta/adam_t"))
    for name, p in model.named_parameters():
        for prefix, target in (
            ("param/", None),
            ("adam/m/", adam_state.m),
            ("adam/v/", adam_state.v),
        ):
            key = prefix + name
            if key not in entries:
                raise CheckpointError(f"missing entry {key}")
            arr = entries[key]
            if arr.shape != p.values.shape:
                raise CheckpointError(
                    f"shape mismatch for {key}: {arr.shape} vs {p.values.shape}"
                )
            if target is None:
                p.values[...] = arr
            else:
                target[name][...] = arr
    return Checkpoint(model, adam_state, cfg, int(scalar("meta/epoch")))


# ---------------------------------------------------------------------------
# transfer classification head


@dataclasses.dataclass
class LinearClassifier:
    weights: np.ndarray  # (classes, C)
    bias: np.ndarray     # (classes,)


def fit_classifier(codes, labels, epochs=500, lr=0.01, seed=0):
    """One-vs-rest hinge loss minimized by full-batch Adam."""
    codes = np.asarray(codes, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[0] != labels.shape[0]:
        raise DomainError("codes and labels disagree in length")
    classes = int(labels.max()) + 1
    if labels.min() < 0:
        raise DomainError("labels must be nonnegative")
    if len(np.unique(labels)) < 2:
        raise DomainError("need at least two classes to fit a classifier")
    n = codes.shape[0]
    if n < classes:
        raise DomainError(f"need at least {classes} samples, got {n}")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(classes, codes.shape[1]))
    b = np.zeros(classes)
    targets = np.full((n, classes), -1.0)
    targets[np.arange(n), labels] = 1.0
    cfg = TrainConfig(lr=lr, batch_size=1, epochs=epochs, seed=seed)
    moments = AdamState.for_params([("weights", w), ("bias", b)])
    for step in range(1, epochs + 1):
        scores = codes @ w.T + b
        active = (1.0 - targets * scores) > 0.0
        coeff = np.where(active, -targets, 0.0) / n
        grad_w = coeff.T @ codes
        grad_b = coeff.sum(axis=0)
        moments.t = step
        adam_step(
            [("weights", w), ("bias", b)], [grad_w, grad_b], moments, cfg, step
        )
    return LinearClassifier(w, b)


def classify(clf, codes):
    """Argmax of linear scores, lowest index on ties."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[1] != clf.weights.shape[1]:
        raise DomainError(
            f"code length {codes.shape} does not match classifier "
            f"{clf.weights.shape}"
        )
    scores = codes @ clf.weights.T + clf.bias
    return np.argmax(scores, axis=1)
