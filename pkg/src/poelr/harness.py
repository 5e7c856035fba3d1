"""Experiment orchestration: baseline, estimate, PoE retraining, monitoring, attack.

Configs are versioned JSON; unknown keys anywhere are errors. Randomness
flows from the config's seed list: run seed ``s`` initializes the model
(stream ``(s, "init")``), orders the batches (``(s, epoch)``), drives the
estimator (``(s, "evt", M, N, i)``) and the attack starts
(``(s, "pgd", example)``). Datasets depend only on ``dataset.seed``.

Each stage of a seed writes its artifacts, then a manifest under
``seed<s>/stages``; manifests are written to a temp file and renamed. With
``resume=True`` a stage whose manifest matches the config fingerprint is
loaded instead of recomputed. ``report.json`` holds only deterministic
content; wall-clock timings go to ``timings.json``.
"""
import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, evaluate
from .data import export_mnist_idx, gen_blobs, gen_quadratic, gen_regression, load_idx
from .evtlip import CANDIDATE_COLUMNS, estimate_lipschitz
from .exceptions import DivergenceError, InvalidInput, NoAcuteBatch, NoEligibleCell
from .models import ModelSpec, accuracy, analytic_smoothness, loss
from .optim import Schedule, SnapshotLog, TrainConfig, make_poe_schedule, train
from .poeverify import monitor_run

CONFIG_VERSION = 1
ARMS = ("baseline", "poe_1", "poe_2")
ROW_COLUMNS = ("seed", "schedule", "status", "eta1", "L_est", "M", "N", "clean_acc", "robust_acc",
               "acuteness_fraction", "construct_fraction", "final_loss", "batch_size", "epochs")
AGG_METRICS = ("clean_acc", "robust_acc", "L_est", "acuteness_fraction", "final_loss")


@dataclass
class DatasetConfig:
    kind: str = "blobs"  # mnist, blobs, quadratic, regression
    n_train: int = 512
    n_test: int = 256
    dim: int = 2
    classes: int = 4
    spread: float = 0.08
    L: float = 4.0
    cond: float = 10.0
    noise: float = 0.1
    data_dir: str = "data"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mnist", "blobs", "quadratic", "regression"):
            raise InvalidInput(f"unknown dataset kind {self.kind!r}")
        if self.n_train < 1 or self.n_test < 0:
            raise InvalidInput("n_train must be >= 1 and n_test >= 0")


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=list)
    activation: str = "tanh"
    loss_kind: str = "softmax_ce"
    bias: bool = True


@dataclass
class EstimatorConfig:
    M_list: list = field(default_factory=lambda: [50, 100])
    N_list: list = field(default_factory=lambda: [20, 40])
    shape0_list: list = field(default_factory=lambda: [0.1, 1.0, 5.0, 10.0])
    alpha: float = 0.55
    report: str = "location"


@dataclass
class MonitorConfig:
    theta_star: str = "final"  # or "exact" for least-squares datasets
    delta: float = 1e-8
    c_fill: float = 0.5

    def __post_init__(self):
        if self.theta_star not in ("final", "exact"):
            raise InvalidInput("monitor.theta_star must be 'final' or 'exact'")


@dataclass
class BatchSearchConfig:
    candidates: list = field(default_factory=list)
    acc_threshold: float = 0.8


@dataclass
class LrSweepConfig:
    eta_grid: list = field(default_factory=list)
    unit: str = "absolute"  # or "analytic_L": grid entries are multiples of 1/L

    def __post_init__(self):
        if self.unit not in ("absolute", "analytic_L"):
            raise InvalidInput("lr_sweep.unit must be 'absolute' or 'analytic_L'")


SECTIONS = {"dataset": DatasetConfig, "model": ModelConfig, "baseline": Schedule, "train": TrainConfig,
            "estimator": EstimatorConfig, "attack": AttackConfig, "monitor": MonitorConfig,
            "batch_search": BatchSearchConfig, "lr_sweep": LrSweepConfig}
# the run seed overrides these, so they may not be set per section
SEEDED = {"train": "seed", "attack": "seed"}


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise InvalidInput(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(d) - names)
    if extra:
        raise InvalidInput(f"unknown key(s) in {where}: {', '.join(extra)}")
    if SEEDED.get(where) in d:
        raise InvalidInput(f"{where}.seed is not allowed; seeds come from the top-level list")
    try:
        return cls(**d)
    except TypeError as exc:
        raise InvalidInput(f"{where}: {exc}") from exc


def _section_dict(obj):
    d = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    baseline: Schedule = field(default_factory=Schedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    batch_search: BatchSearchConfig = field(default_factory=BatchSearchConfig)
    lr_sweep: LrSweepConfig = field(default_factory=LrSweepConfig)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "out"
    track_robust: bool = True
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise InvalidInput(f"config version {self.version} is not supported (expected {CONFIG_VERSION})")
        if not self.seeds:
            raise InvalidInput("at least one seed is required")
        if any(int(s) < 0 or int(s) >= 1 << 64 for s in self.seeds):
            raise InvalidInput("seeds must be unsigned 64-bit integers")
        self.seeds = [int(s) for s in self.seeds]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        top = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(d) - top)
        if extra:
            raise InvalidInput(f"unknown top-level key(s): {', '.join(extra)}")
        for name, sub in SECTIONS.items():
            if name in d:
                d[name] = _build(sub, d[name], name)
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self, with_out_dir=True):
        d = {name: _section_dict(getattr(self, name)) for name in SECTIONS}
        for name, key in SEEDED.items():
            d[name].pop(key, None)
        d.update(seeds=list(self.seeds), track_robust=self.track_robust, version=self.version)
        if with_out_dir:
            d["out_dir"] = self.out_dir
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_dict(with_out_dir=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, out_dir=None, seed=None):
        d = self.to_dict()
        if out_dir is not None:
            d["out_dir"] = out_dir
        if seed is not None:
            d["seeds"] = [int(seed)]
        return ExperimentConfig.from_dict(d)


def load_datasets(dc):
    """``(train, test)`` datasets for a :class:`DatasetConfig`."""
    if dc.kind == "mnist":
        images, labels = export_mnist_idx(os.path.expanduser(dc.data_dir), seed=dc.seed)
        tr = load_idx(images, labels, limit=dc.n_train)
        te = load_idx(images, labels, limit=dc.n_test, offset=dc.n_train) if dc.n_test else tr
        return tr, te
    total = dc.n_train + dc.n_test
    if dc.kind == "blobs":
        ds = gen_blobs(total, dc.dim, dc.classes, dc.spread, dc.seed)
    elif dc.kind == "regression":
        ds = gen_regression(total, dc.dim, noise=dc.noise, seed=dc.seed)
    else:
        ds = gen_quadratic(total, dc.dim, dc.L, dc.cond, dc.noise, dc.seed)
    if not dc.n_test:
        return ds, ds
    return ds.subset(0, dc.n_train), ds.subset(dc.n_train, total)


def model_spec(cfg, train_ds, seed):
    m = cfg.model
    if m.loss_kind == "softmax_ce":
        known = {"mnist": 10, "blobs": cfg.dataset.classes}.get(cfg.dataset.kind, 2)
        out = max(train_ds.n_classes, known)
    else:
        out = train_ds.targets.shape[1] if train_ds.targets is not None else train_ds.n_classes
    return ModelSpec((train_ds.dim, *m.hidden, out), m.activation, m.loss_kind, seed, m.bias)


def exact_minimizer(spec, ds):
    """Least-squares optimum of a one-layer identity ``mse`` model (numpy lstsq)."""
    if len(spec.layer_widths) != 2 or spec.loss_kind != "mse" or spec.activation != "identity":
        raise InvalidInput("an exact minimizer exists only for one-layer identity mse models")
    x = ds.inputs if not spec.bias else np.hstack([ds.inputs, np.ones((len(ds), 1))])
    t = ds.targets if ds.targets is not None else np.eye(spec.out_dim)[ds.labels]
    sol, *_ = np.linalg.lstsq(x, t, rcond=None)
    if not spec.bias:
        return sol.ravel()
    return np.concatenate([sol[:-1].ravel(), sol[-1]])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(_jsonable(obj), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    os.replace(tmp, path)


def write_csv(path, rows, columns):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_cell(r.get(k)) for k in columns})
    os.replace(tmp, path)


def _csv_cell(v):
    if v is None:
        return "nan"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class SeedRun:
    """Stages of the pipeline for one seed, each cached behind a manifest."""

    def __init__(self, cfg, seed, resume=False, data=None, force=()):
        self.cfg = cfg
        self.seed = int(seed)
        self.resume = resume
        self.force = set(force)  # stages recomputed even when resuming
        self.dir = os.path.join(cfg.out_dir, f"seed{self.seed}")
        self.stage_dir = os.path.join(self.dir, "stages")
        os.makedirs(self.stage_dir, exist_ok=True)
        self.train_ds, self.test_ds = data if data is not None else load_datasets(cfg.dataset)
        self.spec = model_spec(cfg, self.train_ds, self.seed)
        self.tcfg = dataclasses.replace(cfg.train, seed=self.seed)
        self.acfg = dataclasses.replace(cfg.attack, seed=self.seed)
        self.timings = {}
        self._memo = {}

    # manifests -----------------------------------------------------------
    def _manifest(self, stage):
        return os.path.join(self.stage_dir, f"{stage}.json")

    def _cached(self, stage):
        if stage in self._memo:
            return self._memo[stage]
        path = self._manifest(stage)
        if not (self.resume and os.path.exists(path)) or stage in self.force:
            return None
        with open(path) as f:
            m = json.load(f)
        if m.get("config_fingerprint") != self.cfg.fingerprint():
            return None
        self.timings[stage] = m.get("seconds")
        self._memo[stage] = m["result"]
        return m["result"]

    def _finish(self, stage, result, seconds=None):
        write_json(self._manifest(stage), {"stage": stage, "seed": self.seed, "seconds": seconds,
                                           "config_fingerprint": self.cfg.fingerprint(), "result": result})
        with open(self._manifest(stage)) as f:
            # keep the JSON image so fresh and resumed runs agree bit for bit
            self._memo[stage] = json.load(f)["result"]
        return self._memo[stage]

    def path(self, name):
        return os.path.join(self.dir, name)

    # stages --------------------------------------------------------------
    def schedule(self, arm):
        if arm == "baseline":
            return self.cfg.baseline
        est = self.estimate()
        if est["status"] != "ok":
            return None
        return make_poe_schedule(self.cfg.baseline, est["L_est"], 1 if arm == "poe_1" else 2)

    def _on_epoch(self, k, theta):
        if self.spec.loss_kind != "softmax_ce":
            return {"test_loss": loss(self.spec, theta, self.test_ds.batch())}
        row = {"test_acc": accuracy(self.spec, theta, self.test_ds.inputs, self.test_ds.labels)}
        if self.cfg.track_robust:
            row["test_robust_acc"] = evaluate(self.spec, theta, self.test_ds, self.acfg)[1]
        return row

    def train_arm(self, arm):
        stage = f"train_{arm}"
        hit = self._cached(stage)
        if hit is not None:
            return hit
        sched = self.schedule(arm)
        if sched is None:
            return self._finish(stage, {"status": "skipped", "eta1": None, "history": []})
        t0 = time.perf_counter()
        try:
            res = train(self.spec, self.train_ds, sched, self.tcfg, on_epoch=self._on_epoch)
        except DivergenceError as exc:
            out = {"status": "diverged", "eta1": sched.eta1, "history": exc.history,
                   "last_finite_epoch": exc.last_finite_epoch}
        else:
            np.save(self.path(f"{arm}_theta.npy"), res.final)
            res.log.save(self.path(f"{arm}.snap"))
            out = {"status": "ok", "eta1": sched.eta1, "history": res.history}
        self.timings[stage] = time.perf_counter() - t0
        return self._finish(stage, out, self.timings[stage])

    def theta(self, arm):
        return np.load(self.path(f"{arm}_theta.npy"))

    def log(self, arm):
        return SnapshotLog.load(self.path(f"{arm}.snap"))

    def estimate(self):
        hit = self._cached("estimate")
        if hit is not None:
            return hit
        base = self.train_arm("baseline")
        if base["status"] != "ok":
            return self._finish("estimate", {"status": "baseline_" + base["status"], "L_est": None,
                                             "candidates": []})
        e = self.cfg.estimator
        t0 = time.perf_counter()
        try:
            est = estimate_lipschitz(self.log("baseline"), e.M_list, e.N_list, e.shape0_list, e.alpha,
                                     seed=self.seed, report=e.report)
        except NoEligibleCell as exc:
            out = {"status": "no_eligible_cell", "L_est": None, "candidates": exc.candidates,
                   "message": str(exc)}
        else:
            out = {"status": "ok", "L_est": est.L_est, "M": est.M, "N": est.N, "shape0": est.shape0,
                   "winning_fit": dataclasses.asdict(est.winning_fit), "candidates": est.candidates}
        self.timings["estimate"] = time.perf_counter() - t0
        return self._finish("estimate", out, self.timings["estimate"])

    def theta_star(self, arm):
        if self.cfg.monitor.theta_star == "exact":
            return exact_minimizer(self.spec, self.train_ds)
        return None

    def evaluate_arm(self, arm):
        stage = f"eval_{arm}"
        hit = self._cached(stage)
        if hit is not None:
            return hit
        tr = self.train_arm(arm)
        out = {"clean_acc": None, "robust_acc": None, "acuteness_fraction": None,
               "construct_fraction": None, "final_loss": None}
        if tr["status"] == "ok":
            t0 = time.perf_counter()
            theta = self.theta(arm)
            mon = monitor_run(epoch_records(self.log(arm), self.tcfg.snapshots_per_epoch),
                              self.theta_star(arm), self.cfg.monitor.delta, self.cfg.monitor.c_fill)
            mon.to_csv(self.path(f"monitor_{arm}.csv"))
            out["acuteness_fraction"] = mon.acute_fraction
            out["construct_fraction"] = mon.construct_fraction
            out["final_loss"] = tr["history"][-1]["loss"]
            if self.spec.loss_kind == "softmax_ce":
                out["clean_acc"], out["robust_acc"] = evaluate(self.spec, theta, self.test_ds, self.acfg)
            self.timings[stage] = time.perf_counter() - t0
        return self._finish(stage, out, self.timings.get(stage))

    def rows(self):
        est = self.estimate()
        rows = []
        arms = ARMS if est["status"] == "ok" else ("baseline",)
        for arm in ARMS:
            tr = self.train_arm(arm) if arm in arms else {"status": est["status"], "eta1": None}
            ev = self.evaluate_arm(arm) if arm in arms else {}
            row = {"seed": self.seed, "schedule": arm, "status": tr["status"], "eta1": tr.get("eta1"),
                   "L_est": est.get("L_est"), "M": est.get("M"), "N": est.get("N"),
                   "batch_size": self.tcfg.batch_size or len(self.train_ds), "epochs": self.tcfg.epochs}
            for k in ("clean_acc", "robust_acc", "acuteness_fraction", "construct_fraction", "final_loss"):
                row[k] = ev.get(k)
            rows.append(row)
        return rows


def epoch_records(log, per):
    """Records that fall on epoch boundaries of a log with ``per`` snapshots per epoch."""
    if per == 1:
        return log
    out = SnapshotLog(model_fingerprint=log.model_fingerprint, schedule_fingerprint=log.schedule_fingerprint)
    out.records = [r for r in log.records if r.epoch % per == 0]
    return out


def aggregate(rows):
    """Mean and sample standard deviation per schedule over finite per-seed values."""
    out = []
    for arm in ARMS:
        sub = [r for r in rows if r["schedule"] == arm]
        agg = {"schedule": arm, "n_seeds": len(sub)}
        for k in AGG_METRICS:
            vals = [float(r[k]) for r in sub if r.get(k) is not None and math.isfinite(float(r[k]))]
            agg[f"{k}_mean"] = float(np.mean(vals)) if vals else None
            agg[f"{k}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None)
            agg[f"{k}_n"] = len(vals)
        out.append(agg)
    return out


@dataclass
class RunReport:
    config: dict
    rows: list
    aggregates: list
    estimates: dict
    status: str = "ok"
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        # timings stay out: they would break run-to-run identity
        return {"config": self.config, "rows": self.rows, "aggregates": self.aggregates,
                "estimates": self.estimates, "status": self.status}


def run_pipeline(cfg, resume=False):
    """Baseline, estimate, both PoE arms, monitoring and attack for every seed.

    A seed whose estimator finds no eligible cell (or whose baseline
    diverges) keeps only its baseline row with the failure as status; the
    other seeds continue. Writes ``report.json``, ``report.csv``,
    ``schedule_curves.csv``, ``acc_vs_epoch_<schedule>.csv``,
    ``acuteness_vs_batch.csv`` and ``evt_candidates.csv`` to ``cfg.out_dir``.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    data = load_datasets(cfg.dataset)
    rows, estimates, curves, cands, timings = [], {}, [], [], {}
    per_epoch = {arm: [] for arm in ARMS}
    statuses = []
    for seed in cfg.seeds:
        run = SeedRun(cfg, seed, resume, data)
        rows.extend(run.rows())
        est = run.estimate()
        statuses.append(est["status"])
        estimates[str(seed)] = {k: v for k, v in est.items() if k != "candidates"}
        cands.extend(dict(c, seed=seed) for c in est.get("candidates", []))
        for arm in ARMS:
            tr = run.train_arm(arm) if (arm == "baseline" or est["status"] == "ok") else {"history": []}
            per_epoch[arm].extend(dict(h, seed=seed) for h in tr["history"])
        for k in range(1, cfg.train.epochs + 1):
            row = {"seed": seed, "epoch": k}
            for arm in ARMS:
                s = run.schedule(arm) if (arm == "baseline" or est["status"] == "ok") else None
                row[arm] = s.value(k) if s is not None else None
            curves.append(row)
        timings[str(seed)] = run.timings

    report = RunReport(config=cfg.to_dict(with_out_dir=False), rows=rows, aggregates=aggregate(rows),
                       estimates=estimates, status="ok" if all(s == "ok" for s in statuses) else "partial",
                       timings=timings)
    out = cfg.out_dir
    write_json(os.path.join(out, "report.json"), report.to_dict())
    agg_rows = []
    for a in report.aggregates:
        for stat in ("mean", "std"):
            r = {"seed": stat, "schedule": a["schedule"], "status": "aggregate"}
            r.update({k: a[f"{k}_{stat}"] for k in AGG_METRICS})
            agg_rows.append(r)
    write_csv(os.path.join(out, "report.csv"), rows + agg_rows, ROW_COLUMNS)
    write_csv(os.path.join(out, "schedule_curves.csv"), curves, ("seed", "epoch") + ARMS)
    hist_cols = ("seed", "epoch", "lr", "loss", "train_acc", "test_acc", "test_robust_acc", "test_loss")
    for arm in ARMS:
        write_csv(os.path.join(out, f"acc_vs_epoch_{arm}.csv"), per_epoch[arm], hist_cols)
    write_csv(os.path.join(out, "acuteness_vs_batch.csv"),
              [r for r in rows if r["acuteness_fraction"] is not None],
              ("seed", "schedule", "batch_size", "acuteness_fraction"))
    write_csv(os.path.join(out, "evt_candidates.csv"), cands, ("seed",) + CANDIDATE_COLUMNS)
    write_json(os.path.join(out, "timings.json"), timings)
    return report


@dataclass
class BatchSearchResult:
    chosen: int
    table: list


def batch_size_search(cfg, candidate_batches=None, acc_threshold=None, seed=None, out_dir=None):
    """Pick a batch size by the acuteness-then-accuracy heuristic.

    Every candidate (ascending; a value ``>= n_train`` means full batch) is
    trained once with the baseline schedule. Starting from the smallest
    candidate whose acuteness fraction is 1.0, the search steps to smaller
    candidates until clean accuracy reaches ``acc_threshold`` and returns that
    batch size. Raises :class:`NoAcuteBatch` with the table when no candidate
    is fully acute or the threshold is never reached.
    """
    bs = cfg.batch_search
    cands = list(candidate_batches if candidate_batches is not None else bs.candidates)
    thr = bs.acc_threshold if acc_threshold is None else acc_threshold
    if not cands:
        raise InvalidInput("no candidate batch sizes")
    if cands != sorted(cands) or len(set(cands)) != len(cands) or cands[0] < 1:
        raise InvalidInput("candidate batch sizes must be positive, distinct and ascending")
    if not 0 < thr:
        raise InvalidInput("acc_threshold must be positive")
    seed = cfg.seeds[0] if seed is None else int(seed)
    train_ds, test_ds = load_datasets(cfg.dataset)
    spec = model_spec(cfg, train_ds, seed)
    table = []
    for b in cands:
        full = b >= len(train_ds)
        tcfg = dataclasses.replace(cfg.train, seed=seed, batch_size=None if full else b,
                                   snapshots_per_epoch=1)
        row = {"seed": seed, "batch_size": len(train_ds) if full else b, "acuteness_fraction": None,
               "clean_acc": None, "status": "ok"}
        try:
            res = train(spec, train_ds, cfg.baseline, tcfg)
        except DivergenceError:
            row["status"] = "diverged"
        else:
            star = exact_minimizer(spec, train_ds) if cfg.monitor.theta_star == "exact" else None
            row["acuteness_fraction"] = monitor_run(res.log, star).acute_fraction
            if spec.loss_kind == "softmax_ce":
                row["clean_acc"] = accuracy(spec, res.final, test_ds.inputs, test_ds.labels)
        table.append(row)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "acuteness_vs_batch.csv"), table,
                  ("seed", "batch_size", "acuteness_fraction", "clean_acc", "status"))
    start = next((i for i, r in enumerate(table) if r["acuteness_fraction"] == 1.0), None)
    if start is None:
        raise NoAcuteBatch("no candidate batch size keeps every epoch acute", table)
    for i in range(start, -1, -1):
        acc = table[i]["clean_acc"]
        if acc is not None and acc >= thr:
            return BatchSearchResult(table[i]["batch_size"], table)
    raise NoAcuteBatch(f"clean accuracy never reaches {thr} at or below batch size "
                       f"{table[start]['batch_size']}", table)


def lr_sweep(cfg, eta_grid=None, seed=None, out_dir=None):
    """Train one model per constant learning rate; clean and PGD accuracy per rate.

    A run that raises :class:`DivergenceError`, or whose final loss exceeds
    10x its first-epoch loss, is flagged divergent with ``None`` accuracies.
    With ``lr_sweep.unit == "analytic_L"`` the grid holds multiples of
    ``1/L`` for the closed-form smoothness of a one-layer ``mse`` model.
    """
    grid = list(eta_grid if eta_grid is not None else cfg.lr_sweep.eta_grid)
    if not grid:
        raise InvalidInput("eta_grid is empty")
    seed = cfg.seeds[0] if seed is None else int(seed)
    train_ds, test_ds = load_datasets(cfg.dataset)
    spec = model_spec(cfg, train_ds, seed)
    unit = 1.0
    if cfg.lr_sweep.unit == "analytic_L":
        unit = 1.0 / analytic_smoothness(spec, train_ds.inputs)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    acfg = dataclasses.replace(cfg.attack, seed=seed)
    rows = []
    for g in grid:
        eta = float(g) * unit
        row = {"seed": seed, "grid_value": float(g), "eta": eta, "clean_acc": None, "robust_acc": None,
               "final_loss": None, "diverged": False}
        try:
            res = train(spec, train_ds, Schedule("constant", eta), tcfg)
        except DivergenceError:
            row["diverged"] = True
        else:
            row["final_loss"] = res.history[-1]["loss"]
            if res.history[-1]["loss"] > 10.0 * res.history[0]["loss"]:
                row["diverged"] = True
            elif spec.loss_kind == "softmax_ce":
                row["clean_acc"], row["robust_acc"] = evaluate(spec, res.final, test_ds, acfg)
        rows.append(row)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "lr_sweep.csv"), rows,
                  ("seed", "grid_value", "eta", "clean_acc", "robust_acc", "final_loss", "diverged"))
    return rows
