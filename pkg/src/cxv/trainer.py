"""Epoch loop, evaluation, DualOpT transitions, metrics CSV and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, NormStats, TrainSchedule, batch_iter, find_split_files, load_cifar
from .errors import CheckpointError, DatasetIOError, NumericalError
from .model import CXVNet, build_model
from .optim import AdamWState, Decision, Phase, SGDState, adamw_step, sgd_step
from .tensor import Tensor, no_grad, precision

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "phase", "optimizer", "train_loss", "train_top1", "test_top1", "epoch_seconds"]


@dataclass
class MetricsRecord:
    epoch: int
    phase: int
    optimizer: str
    train_loss: float
    train_top1: float
    test_top1: float
    epoch_seconds: float

    def row(self) -> list[str]:
        return [str(self.epoch), str(self.phase), self.optimizer, f"{self.train_loss:.6f}",
                f"{self.train_top1:.6f}", f"{self.test_top1:.6f}", f"{self.epoch_seconds:.3f}"]


@dataclass
class RunState:
    model: CXVNet
    schedule: TrainSchedule
    adamw: AdamWState
    sgd: Optional[SGDState] = None
    seed: int = 0
    epoch: int = 0  # last completed epoch
    batch_size: int = 32
    finished: bool = False
    best_test: float = -1.0
    best_path: Optional[Path] = None
    sgd_template: SGDState = field(default_factory=SGDState)
    adamw_template: AdamWState = field(default_factory=AdamWState)
    wall_clock: bool = True
    max_phase_epochs: int = 0  # 0: controller decides alone
    phase_epochs: int = 0


def fresh_sgd(template: SGDState) -> SGDState:
    return SGDState(lr=template.lr, momentum=template.momentum)


def fresh_adamw(template: AdamWState) -> AdamWState:
    return AdamWState(lr=template.lr, beta1=template.beta1, beta2=template.beta2, eps=template.eps,
                      weight_decay=template.weight_decay, exclude_norm_bias=template.exclude_norm_bias)


def predict(model: CXVNet, x: Tensor) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    model.eval()
    with no_grad():
        return np.argmax(model(x).data, axis=1)


def evaluate(model: CXVNet, batches: Iterable[tuple[Tensor, np.ndarray]]) -> float:
    """Top-1 fraction over all batches, in eval mode."""
    correct = total = 0
    for x, y in batches:
        correct += int(np.sum(predict(model, x) == y))
        total += len(y)
    return correct / total if total else 0.0


def evaluate_dataset(model: CXVNet, ds: Dataset, stats: NormStats, batch_size: int = 128) -> float:
    return evaluate(model, batch_iter(ds, batch_size, 0, 0, stats, shuffle=False))


def train_epoch(run: RunState, train: Dataset, test: Dataset, stats: NormStats) -> MetricsRecord:
    """One pass over the shuffled training split, then test evaluation and the controller update."""
    t0 = time.perf_counter()
    epoch = run.epoch + 1
    phase_idx = run.schedule.current
    phase = run.schedule.active
    controller = phase.dualopt
    optimizer = controller.optimizer
    model = run.model
    model.train()
    model.set_rng(np.random.default_rng([run.seed, 7, epoch]))
    named = list(model.named_parameters())
    loss_sum = 0.0
    correct = seen = 0
    for bi, (x, y) in enumerate(batch_iter(train, run.batch_size, run.seed, epoch, stats, phase.augment)):
        model.zero_grad()
        logits = model(x)
        loss = ops.cross_entropy(logits, y)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
        loss.backward()
        if optimizer == "sgd":
            sgd_step(named, run.sgd)
        else:
            adamw_step(named, run.adamw)
        loss_sum += value * len(y)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
        seen += len(y)
    model.set_rng(None)
    test_top1 = evaluate_dataset(model, test, stats)
    decision = controller.update(epoch, test_top1)
    run.phase_epochs += 1
    if decision is not Decision.STOP and run.max_phase_epochs and run.phase_epochs >= run.max_phase_epochs:
        controller.phase = Phase.DONE
        decision = Decision.STOP
    if decision is Decision.SWITCH_TO_SGD:
        log.info("epoch %d: accuracy plateau, switching to SGD", epoch)
        run.sgd = fresh_sgd(run.sgd_template)
    elif decision is Decision.STOP:
        _advance_phase(run)
    run.epoch = epoch
    seconds = time.perf_counter() - t0 if run.wall_clock else 0.0
    return MetricsRecord(epoch, phase_idx + 1, optimizer, loss_sum / seen, correct / seen, test_top1, seconds)


def _advance_phase(run: RunState) -> None:
    run.phase_epochs = 0
    if run.schedule.current + 1 < len(run.schedule.phases):
        run.schedule.current += 1
        run.adamw = fresh_adamw(run.adamw_template)
        run.sgd = None
        log.info("advancing to schedule phase %d", run.schedule.current + 1)
    else:
        run.finished = True


# ---------------------------------------------------------------------------
# checkpoints

_PHASE_CODE = {Phase.ADAM: 0, Phase.SGD: 1, Phase.DONE: 2}


def run_state_tensors(run: RunState) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {name: p.data for name, p in run.model.named_parameters()}
    out["opt.adamw.t"] = np.array(run.adamw.t, dtype=np.int64)
    for name, arr in run.adamw.m.items():
        out[f"opt.adamw.m.{name}"] = arr
        out[f"opt.adamw.v.{name}"] = run.adamw.v[name]
    if run.sgd is not None:
        out["opt.sgd.active"] = np.array(1, dtype=np.int64)
        for name, arr in run.sgd.velocity.items():
            out[f"opt.sgd.velocity.{name}"] = arr
    for i, ph in enumerate(run.schedule.phases):
        c = ph.dualopt
        out[f"opt.ctrl.{i}.phase"] = np.array(_PHASE_CODE[c.phase], dtype=np.int64)
        out[f"opt.ctrl.{i}.best_acc"] = np.array(c.best_acc, dtype=np.float64)
        out[f"opt.ctrl.{i}.since"] = np.array(c.epochs_since_improvement, dtype=np.int64)
        out[f"opt.ctrl.{i}.sgd_run"] = np.array(c.sgd_epochs_run, dtype=np.int64)
    out["run.epoch"] = np.array(run.epoch, dtype=np.int64)
    out["run.phase"] = np.array(run.schedule.current, dtype=np.int64)
    out["run.phase_epochs"] = np.array(run.phase_epochs, dtype=np.int64)
    out["run.finished"] = np.array(int(run.finished), dtype=np.int64)
    out["run.best_test"] = np.array(run.best_test, dtype=np.float64)
    return out


def restore_run_state(run: RunState, tensors: dict[str, np.ndarray]) -> None:
    try:
        run.model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith(("opt.", "run."))})
        run.adamw.t = int(tensors["opt.adamw.t"])
        run.adamw.m = {k[len("opt.adamw.m."):]: v.copy() for k, v in tensors.items() if k.startswith("opt.adamw.m.")}
        run.adamw.v = {k[len("opt.adamw.v."):]: v.copy() for k, v in tensors.items() if k.startswith("opt.adamw.v.")}
        if "opt.sgd.active" in tensors:
            run.sgd = fresh_sgd(run.sgd_template)
            run.sgd.velocity = {k[len("opt.sgd.velocity."):]: v.copy()
                                for k, v in tensors.items() if k.startswith("opt.sgd.velocity.")}
        codes = {v: k for k, v in _PHASE_CODE.items()}
        for i, ph in enumerate(run.schedule.phases):
            c = ph.dualopt
            c.phase = codes[int(tensors[f"opt.ctrl.{i}.phase"])]
            c.best_acc = float(tensors[f"opt.ctrl.{i}.best_acc"])
            c.epochs_since_improvement = int(tensors[f"opt.ctrl.{i}.since"])
            c.sgd_epochs_run = int(tensors[f"opt.ctrl.{i}.sgd_run"])
        run.epoch = int(tensors["run.epoch"])
        run.schedule.current = int(tensors["run.phase"])
        run.phase_epochs = int(tensors["run.phase_epochs"])
        run.finished = bool(int(tensors["run.finished"]))
        run.best_test = float(tensors["run.best_test"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match this run configuration: {exc}") from None


# ---------------------------------------------------------------------------
# full runs


def load_splits(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    root = cfg.data_dir()
    if not root:
        raise DatasetIOError("no dataset directory: set data.dir or CXV_DATA_DIR")
    tr_files, te_files = find_split_files(root, cfg["data.dataset"])
    train = load_cifar(tr_files, cfg["data.dataset"])
    test = load_cifar(te_files, cfg["data.dataset"])
    if cfg["data.train_subset"]:
        train = train.subset(cfg["data.train_subset"])
    if cfg["data.test_subset"]:
        test = test.subset(cfg["data.test_subset"])
    return train, test


def new_run(cfg: RunConfig) -> RunState:
    adamw = cfg.adamw_state()
    return RunState(model=build_model(cfg.model_config(), seed=cfg["seed"]), schedule=cfg.schedule(),
                    adamw=adamw, seed=cfg["seed"], batch_size=cfg["data.batch_size"],
                    sgd_template=cfg.sgd_state(), adamw_template=fresh_adamw(adamw),
                    wall_clock=cfg["out.wall_clock"], max_phase_epochs=cfg["schedule.max_epochs"])


def run_schedule(cfg: RunConfig, data: Optional[tuple[Dataset, Dataset]] = None,
                 resume: Optional[str] = None, max_total_epochs: Optional[int] = None) -> list[MetricsRecord]:
    """Train through every schedule phase, writing ``metrics.csv`` and checkpoints to ``out.dir``.

    Each phase ends when its controller says Stop or after ``schedule.max_epochs``
    epochs in that phase. ``max_total_epochs`` caps this invocation (for tests
    and resumable chunks).
    """
    out = Path(cfg["out.dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CheckpointError(f"cannot create output directory {out}: {exc.strerror}") from exc
    with precision(cfg["precision"]):
        train, test = data if data is not None else load_splits(cfg)
        stats = NormStats.from_images(train.images)
        run = new_run(cfg)
        if resume:
            restore_run_state(run, load_checkpoint(resume))
        csv_path = out / "metrics.csv"
        fresh = not resume or not csv_path.exists()
        records: list[MetricsRecord] = []
        with open(csv_path, "w" if fresh else "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(CSV_HEADER)
            while not run.finished:
                if max_total_epochs is not None and len(records) >= max_total_epochs:
                    break
                rec = train_epoch(run, train, test, stats)
                records.append(rec)
                writer.writerow(rec.row())
                fh.flush()
                log.info("epoch %d phase %d %s loss %.4f train %.4f test %.4f", rec.epoch, rec.phase,
                         rec.optimizer, rec.train_loss, rec.train_top1, rec.test_top1)
                if rec.test_top1 > run.best_test:
                    run.best_test = rec.test_top1
                    run.best_path = out / "best.ckpt"
                    save_checkpoint(run.best_path, run_state_tensors(run))
                every = cfg["out.checkpoint_every"]
                if every and rec.epoch % every == 0:
                    save_checkpoint(out / f"epoch_{rec.epoch:04d}.ckpt", run_state_tensors(run))
                    save_checkpoint(out / "last.ckpt", run_state_tensors(run))
        return records


def evaluate_checkpoint(cfg: RunConfig, checkpoint: str, data: Optional[tuple[Dataset, Dataset]] = None) -> float:
    tensors = load_checkpoint(checkpoint)
    with precision(cfg["precision"]):
        train, test = data if data is not None else load_splits(cfg)
        stats = NormStats.from_images(train.images)
        model = build_model(cfg.model_config(), seed=cfg["seed"])
        try:
            model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith(("opt.", "run."))})
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{checkpoint}: {exc}") from None
        return evaluate_dataset(model, test, stats)
