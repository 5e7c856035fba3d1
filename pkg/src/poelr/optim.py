"""Gradient descent, learning-rate schedules and per-epoch snapshots."""
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import batch_indices
from .exceptions import DivergenceError, FormatError, InvalidInput, NumericalOverflow
from .models import accuracy, init_params, loss_and_grad

SCHEDULE_KINDS = ("constant", "step_decay", "exp_decay", "cosine")


@dataclass(frozen=True)
class Schedule:
    """Learning rate ``eta1 * shape(k)`` for epochs ``k >= 1`` with ``shape(1) == 1``.

    ``step_decay`` multiplies by ``factor`` at every epoch in ``milestones``
    (the new rate applies from that epoch on); ``exp_decay`` multiplies by
    ``rate`` every epoch; ``cosine`` anneals from ``eta1`` towards zero over
    ``period`` epochs and restarts.
    """

    kind: str = "constant"
    eta1: float = 0.1
    milestones: tuple = ()
    factor: float = 0.1
    rate: float = 0.95
    period: int = 10

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidInput(f"unknown schedule kind {self.kind!r}")
        if not (self.eta1 > 0 and math.isfinite(self.eta1)):
            raise InvalidInput("eta1 must be positive and finite")
        if not 0 < self.factor <= 1:
            raise InvalidInput("step_decay factor must lie in (0, 1]")
        if not 0 < self.rate <= 1:
            raise InvalidInput("exp_decay rate must lie in (0, 1]")
        if self.period < 1:
            raise InvalidInput("cosine period must be >= 1")

    def shape(self, k):
        if k < 1:
            raise InvalidInput("epochs are numbered from 1")
        if self.kind == "constant":
            return 1.0
        if self.kind == "step_decay":
            return self.factor ** sum(1 for m in self.milestones if k >= m)
        if self.kind == "exp_decay":
            return self.rate ** (k - 1)
        phase = (k - 1) % self.period
        return 0.5 * (1.0 + math.cos(math.pi * phase / self.period))

    def value(self, k):
        return self.eta1 * self.shape(k)

    def to_dict(self):
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def schedule_value(s, k):
    return s.value(k)


def make_poe_schedule(baseline, L_est, multiplier=1):
    """Rescale ``baseline`` so it starts at ``multiplier / L_est``.

    Every later value keeps the baseline's ratio to its first value, so
    ``multiplier=1`` stays below ``1/L_est`` throughout.
    """
    if not (L_est > 0 and math.isfinite(L_est)):
        raise InvalidInput("L_est must be positive and finite")
    if multiplier not in (1, 2):
        raise InvalidInput("multiplier must be 1 or 2")
    d = baseline.to_dict()
    d["eta1"] = multiplier / L_est
    return Schedule.from_dict(d)


def gd_step(theta, grad, eta):
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise InvalidInput("theta and grad lengths differ")
    if not eta > 0:
        raise InvalidInput("eta must be positive")
    return theta - eta * grad


SNAPSHOT_GRADS = ("full", "epoch_mean")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = None  # None means full batch
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    snapshot_grad: str = "full"
    # >1 adds snapshots at evenly spaced steps inside each epoch
    snapshots_per_epoch: int = 1
    log_steps: bool = False
    # loss above this multiple of the first epoch's loss counts as divergence
    divergence_factor: float = 1e8

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.momentum < 0 or self.weight_decay < 0:
            raise InvalidInput("momentum and weight_decay must be non-negative")
        if self.snapshots_per_epoch < 1:
            raise InvalidInput("snapshots_per_epoch must be >= 1")
        if self.snapshot_grad not in SNAPSHOT_GRADS:
            raise InvalidInput(f"snapshot_grad must be one of {SNAPSHOT_GRADS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SnapshotRecord:
    epoch: int
    theta: np.ndarray
    avg_grad: np.ndarray


SNAPSHOT_MAGIC = b"POESNAP1"


@dataclass
class SnapshotLog:
    """Parameters and average loss gradient, one record per epoch.

    Record ``k`` holds the parameters after epoch ``k`` and the gradient of
    the training-set mean loss at those parameters (``snapshot_grad="full"``)
    or the mean of the mini-batch gradients taken during the epoch
    (``"epoch_mean"``). Under full-batch GD with the default,
    ``theta^{k+1} = theta^k - eta^{k+1} * avg_grad^k`` holds exactly. With
    ``snapshots_per_epoch = s > 1`` the ``epoch`` field counts snapshots, and
    every ``s``-th record falls on an epoch boundary.

    File format: ``POESNAP1``, a little-endian uint32 header length, a UTF-8
    JSON header, then per record a uint32 epoch followed by ``d`` float64
    parameters and ``d`` float64 gradient entries, all little-endian.
    """

    records: list = field(default_factory=list)
    model_fingerprint: str = ""
    schedule_fingerprint: str = ""

    def append(self, epoch, theta, avg_grad):
        if self.records and epoch <= self.records[-1].epoch:
            raise InvalidInput("snapshot epochs must be strictly increasing")
        if self.records and len(theta) != self.dim:
            raise InvalidInput("snapshot vectors must all have the same length")
        self.records.append(SnapshotRecord(int(epoch), np.array(theta, dtype=np.float64),
                                           np.array(avg_grad, dtype=np.float64)))

    def __len__(self):
        return len(self.records)

    @property
    def dim(self):
        return len(self.records[0].theta) if self.records else 0

    @property
    def epochs(self):
        return np.array([r.epoch for r in self.records])

    @property
    def thetas(self):
        return np.array([r.theta for r in self.records])

    @property
    def grads(self):
        return np.array([r.avg_grad for r in self.records])

    def header(self):
        return {"format": 1, "model_fingerprint": self.model_fingerprint,
                "schedule_fingerprint": self.schedule_fingerprint,
                "d": self.dim, "epochs": len(self.records)}

    def save(self, path):
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(SNAPSHOT_MAGIC)
            f.write(struct.pack("<I", len(head)))
            f.write(head)
            for r in self.records:
                f.write(struct.pack("<I", r.epoch))
                f.write(np.asarray(r.theta, dtype="<f8").tobytes())
                f.write(np.asarray(r.avg_grad, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            buf = f.read()
        if buf[:8] != SNAPSHOT_MAGIC:
            raise FormatError(f"{path}: not a snapshot file", offset=0)
        if len(buf) < 12:
            raise FormatError(f"{path}: truncated header", offset=len(buf))
        (hlen,) = struct.unpack_from("<I", buf, 8)
        try:
            head = json.loads(buf[12:12 + hlen].decode("utf-8"))
        except ValueError as exc:
            raise FormatError(f"{path}: bad JSON header ({exc})", offset=12) from exc
        d, n = head["d"], head["epochs"]
        rec = 4 + 16 * d
        pos = 12 + hlen
        if len(buf) != pos + n * rec:
            raise FormatError(f"{path}: expected {n} records of {rec} bytes", offset=len(buf))
        log = cls(model_fingerprint=head["model_fingerprint"],
                  schedule_fingerprint=head["schedule_fingerprint"])
        for _ in range(n):
            (epoch,) = struct.unpack_from("<I", buf, pos)
            theta = np.frombuffer(buf, dtype="<f8", count=d, offset=pos + 4)
            grad = np.frombuffer(buf, dtype="<f8", count=d, offset=pos + 4 + 8 * d)
            log.records.append(SnapshotRecord(epoch, theta.astype(np.float64), grad.astype(np.float64)))
            pos += rec
        return log


@dataclass
class TrainResult:
    final: np.ndarray
    log: SnapshotLog
    history: list
    step_log: SnapshotLog = None


def train(spec, dataset, schedule, cfg, theta0=None, on_epoch=None):
    """SGD with momentum and weight decay; records one snapshot per epoch.

    Each mini-batch update is ``g = grad + weight_decay * theta``,
    ``v = momentum * v + g``, ``theta = theta - eta_k * v``. Batches for
    epoch ``k`` come from a stream keyed by ``(cfg.seed, k)``. The history
    row for an epoch carries the learning rate, the training loss at the end
    of the epoch (the mean mini-batch loss under ``"epoch_mean"``) and, for
    classifiers, training accuracy; ``on_epoch(k, theta)`` may return extra
    metrics to merge in.

    With ``cfg.snapshots_per_epoch = s`` the log gets a record after steps
    ``round(j * n_batches / s)``, ``j = 1..s``, of every epoch.
    """
    theta = init_params(spec, cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    n = len(dataset)
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    full = dataset.batch()
    velocity = np.zeros_like(theta)
    log = SnapshotLog(model_fingerprint=spec.fingerprint(), schedule_fingerprint=schedule.fingerprint())
    step_log = SnapshotLog(model_fingerprint=log.model_fingerprint,
                           schedule_fingerprint=log.schedule_fingerprint) if cfg.log_steps else None
    per = cfg.snapshots_per_epoch
    n_chunks = -(-n // bs)
    if per > n_chunks:
        raise InvalidInput(f"snapshots_per_epoch={per} exceeds the {n_chunks} steps per epoch")
    marks = {round(j * n_chunks / per): j for j in range(1, per + 1)}
    history = []
    first_loss = None
    cached = None  # full-batch (loss, grad) at the current theta
    for k in range(1, cfg.epochs + 1):
        eta = schedule.value(k)
        grad_sum = np.zeros_like(theta)
        since = 0
        losses = []
        chunks = batch_indices(n, bs, _epoch_seed(cfg.seed, k)) if bs < n else [None]
        for step, idx in enumerate(chunks, 1):
            if idx is None and cached is not None:
                value, grad = cached
            else:
                value, grad = _loss_grad(spec, theta, full if idx is None else dataset.batch(idx), k, history)
            if step_log is not None:
                step_log.append(len(step_log) + 1, theta, grad)
            grad_sum += grad
            since += 1
            losses.append(value)
            g = grad + cfg.weight_decay * theta if cfg.weight_decay else grad
            velocity = cfg.momentum * velocity + g if cfg.momentum else g
            theta = theta - eta * velocity
            if step in marks:
                if not np.all(np.isfinite(theta)):
                    raise DivergenceError(f"parameters overflowed in epoch {k}", k - 1, history)
                if cfg.snapshot_grad == "full":
                    cached = _loss_grad(spec, theta, full, k, history)
                    snap = cached[1]
                else:
                    snap = grad_sum / since
                log.append((k - 1) * per + marks[step], theta, snap)
                grad_sum, since = np.zeros_like(theta), 0
        if cfg.snapshot_grad == "full":
            epoch_loss = cached[0]
        else:
            epoch_loss = math.fsum(losses) / len(losses)
        if first_loss is None:
            first_loss = max(epoch_loss, 1e-300)
        if epoch_loss > cfg.divergence_factor * first_loss:
            raise DivergenceError(f"loss blew up in epoch {k}", k - 1, history)
        row = {"epoch": k, "lr": eta, "loss": epoch_loss}
        if spec.loss_kind == "softmax_ce":
            row["train_acc"] = accuracy(spec, theta, dataset.inputs, dataset.labels)
        if on_epoch is not None:
            row.update(on_epoch(k, theta) or {})
        history.append(row)
    return TrainResult(theta, log, history, step_log)


def _loss_grad(spec, theta, batch, k, history):
    try:
        value, grad = loss_and_grad(spec, theta, batch)
    except NumericalOverflow as exc:
        raise DivergenceError(f"overflow in epoch {k}", k - 1, history) from exc
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss in epoch {k}", k - 1, history)
    return value, grad


def _epoch_seed(seed, k):
    # mixes run seed and epoch into one u64; make_rng adds its own stream key
    return (int(seed) * 1_000_003 + int(k)) % (1 << 63)
