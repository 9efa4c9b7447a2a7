"""Parallel training of N dual pairs, one per source, and separation."""

from __future__ import annotations

import csv
import io
import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .backbone import RMSProp, Tensor, backward, clip_weights, frozen, no_grad
from .backbone.tensor import ShapeError
from .dataset import Dataset, SampleRecord
from .losses import LossConfig, critic_loss_a, critic_loss_b, generator_loss
from .nets import (
    ArchDescriptor,
    BoundCritic,
    BoundGenerator,
    from_batch,
    generator_forward,
    init_critic,
    init_generator,
    to_batch,
)

log = logging.getLogger(__name__)


class NaNLossError(ArithmeticError):
    """A loss went non-finite; training stops and keeps the log so far."""

    def __init__(self, submodel: int, step: int, loss_name: str, entries=None):
        super().__init__(f"non-finite {loss_name} loss in sub-model {submodel} at step {step}")
        self.submodel, self.step, self.loss_name = submodel, step, loss_name
        self.entries = list(entries or [])


@dataclass
class TrainConfig:
    n_critic: int = 3
    lr: float = 5e-5
    rho: float = 0.9
    eps: float = 1e-8
    batch_size: int = 1
    epochs: int = 2000
    mode: str = "clip"
    clip: float = 0.05
    lambda_gp: float = 10.0
    lambda_u: float = 1000.0
    lambda_v: float = 1000.0
    seed: int = 0
    checkpoint_interval: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_critic < 1:
            raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.checkpoint_interval < 0 or self.workers < 1:
            raise ValueError("checkpoint_interval must be >= 0 and workers >= 1")
        self.losses()  # validates the loss settings

    def losses(self) -> LossConfig:
        return LossConfig(self.lambda_u, self.lambda_v, self.mode, self.clip, self.lambda_gp)


@dataclass
class SubModel:
    """One dual pair: G_A maps mixture -> source i, G_B maps it back."""

    ga: dict
    gb: dict
    da: dict
    db: dict
    opt_g: RMSProp
    opt_da: RMSProp
    opt_db: RMSProp
    step: int = 0

    def named_params(self) -> dict:
        out = {}
        for group, params in (("G_A", self.ga), ("G_B", self.gb), ("D_A", self.da), ("D_B", self.db)):
            for name, t in params.items():
                out[f"{group}/{name}"] = t
        return out

    def named_states(self) -> dict:
        out = {}
        for group, opt in (("G", self.opt_g), ("D_A", self.opt_da), ("D_B", self.opt_db)):
            for name, acc in opt.acc.items():
                out[f"{group}/{name}"] = acc
        return out


def _new_submodel(desc: ArchDescriptor, seed: int, lr: float, rho: float, eps: float) -> SubModel:
    seeds = np.random.SeedSequence(seed).generate_state(4)
    ga, gb = init_generator(desc, int(seeds[0])), init_generator(desc, int(seeds[1]))
    da, db = init_critic(desc, int(seeds[2])), init_critic(desc, int(seeds[3]))
    gen = {f"G_A/{k}": v for k, v in ga.items()} | {f"G_B/{k}": v for k, v in gb.items()}
    return SubModel(ga, gb, da, db, RMSProp(gen, lr, rho, eps), RMSProp(da, lr, rho, eps), RMSProp(db, lr, rho, eps))


@dataclass
class PDualGanModel:
    desc: ArchDescriptor
    subs: list

    @property
    def n(self) -> int:
        return len(self.subs)

    @classmethod
    def create(
        cls,
        n: int,
        desc: ArchDescriptor,
        seed: int = 0,
        lr: float = 5e-5,
        rho: float = 0.9,
        eps: float = 1e-8,
        clip: float | None = None,
    ):
        """Fresh model; with ``clip`` the critics start inside [-clip, clip].

        Clipping at creation keeps the clip-mode bound true from step 0, so a
        zero learning rate leaves every parameter untouched.
        """
        if n < 1:
            raise ValueError(f"need at least one sub-model, got {n}")
        model = cls(desc, [_new_submodel(desc, substream(seed, i), lr, rho, eps) for i in range(n)])
        if clip is not None:
            for sub in model.subs:
                clip_weights(list(sub.da.values()) + list(sub.db.values()), clip)
        return model

    @classmethod
    def for_config(cls, n: int, desc: ArchDescriptor, cfg: "TrainConfig") -> "PDualGanModel":
        clip = cfg.clip if cfg.mode == "clip" else None
        return cls.create(n, desc, seed=cfg.seed, lr=cfg.lr, rho=cfg.rho, eps=cfg.eps, clip=clip)

    def set_lr(self, lr: float) -> None:
        for sub in self.subs:
            for opt in (sub.opt_g, sub.opt_da, sub.opt_db):
                opt.lr = lr


def substream(base_seed: int, index: int) -> int:
    """Seed of sub-model ``index``'s private RNG stream."""
    return int(base_seed) ^ int(index)


def step_rng(base_seed: int, index: int, step: int) -> np.random.Generator:
    return np.random.default_rng([substream(base_seed, index), step])


@dataclass
class LogEntry:
    step: int
    submodel: int
    loss_name: str
    value: float
    parts: dict = field(default_factory=dict, compare=False, repr=False)


class TrainLog:
    """Append-only record of every loss evaluation."""

    def __init__(self, entries: Sequence[LogEntry] = ()):
        self.entries: list[LogEntry] = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def extend(self, entries) -> None:
        self.entries.extend(entries)

    def for_submodel(self, i: int) -> list[LogEntry]:
        return [e for e in self.entries if e.submodel == i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "submodel", "loss_name", "value"])
        for e in self.entries:
            w.writerow([e.step, e.submodel, e.loss_name, repr(float(e.value))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


# -- training ------------------------------------------------------------------

def _fill_missing_grads(params) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def _check(value: float, i: int, step: int, name: str, done: list) -> None:
    if not math.isfinite(value):
        raise NaNLossError(i, step, name, done)


def submodel_step(
    sub: SubModel,
    i: int,
    desc: ArchDescriptor,
    u: np.ndarray,
    v: np.ndarray,
    cfg: TrainConfig,
) -> list[LogEntry]:
    """n_critic critic-pair updates, then one joint generator update."""
    step = sub.step + 1
    rng = step_rng(cfg.seed, i, step)
    losses = cfg.losses()
    u_t, v_t = Tensor(u), Tensor(v)
    ga = BoundGenerator(sub.ga, desc, rng)
    gb = BoundGenerator(sub.gb, desc, rng)
    da, db = BoundCritic(sub.da, desc), BoundCritic(sub.db, desc)
    entries: list[LogEntry] = []
    suffix = "_gp" if cfg.mode == "gp" else ""
    for _ in range(cfg.n_critic):
        for critic_params, opt, loss_fn, gen, critic, name in (
            (sub.da, sub.opt_da, critic_loss_a, ga, da, "critic_A"),
            (sub.db, sub.opt_db, critic_loss_b, gb, db, "critic_B"),
        ):
            loss = loss_fn(u_t, v_t, gen, critic, losses, rng)
            value = float(loss.data)
            _check(value, i, step, name, entries)
            backward(loss)
            _fill_missing_grads(critic_params.values())
            opt.step()
            if cfg.mode == "clip":
                clip_weights(critic_params.values(), cfg.clip)
            entries.append(LogEntry(step, i, name + suffix, value))
    with frozen(list(sub.da.values()) + list(sub.db.values())):
        loss, parts = generator_loss(u_t, v_t, ga, gb, da, db, losses)
    value = float(loss.data)
    _check(value, i, step, "generator", entries)
    backward(loss)
    _fill_missing_grads(sub.opt_g.params.values())
    sub.opt_g.step()
    entries.append(LogEntry(step, i, "generator", value, parts))
    sub.step = step
    return entries


def train_step(model: PDualGanModel, record: SampleRecord, cfg: TrainConfig) -> list[LogEntry]:
    if len(record.sources) != model.n:
        raise ValueError(f"record has {len(record.sources)} sources, model has {model.n}")
    u = to_batch(record.mixture, model.desc)
    entries = []
    for i, sub in enumerate(model.subs):
        entries.extend(submodel_step(sub, i, model.desc, u, to_batch(record.sources[i], model.desc), cfg))
    return entries


def epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    return np.random.default_rng([int(seed), 1 << 20, epoch]).permutation(count)


def _train_submodel_range(sub, i, desc, records, cfg, first_epoch, last_epoch):
    entries = []
    with threadpool_limits(1):
        for epoch in range(first_epoch, last_epoch):
            for idx in epoch_order(cfg.seed, epoch, len(records)):
                u, sources = records[idx]
                entries.extend(submodel_step(sub, i, desc, u, sources[i], cfg))
    return sub, entries


def _worker_task(args):
    sub, i, desc, records, cfg, first, last = args
    try:
        return _train_submodel_range(sub, i, desc, records, cfg, first, last)
    except NaNLossError as exc:
        return exc


def _merge(entries):
    # step order, then sub-model, then evaluation order within the step
    return sorted(entries, key=lambda e: (e.step, e.submodel))


def train(
    model: PDualGanModel,
    dataset: Dataset,
    cfg: TrainConfig,
    checkpoint_path=None,
    on_epoch: Callable[[int, PDualGanModel], None] | None = None,
) -> tuple[PDualGanModel, TrainLog]:
    """Run ``cfg.epochs`` passes over the dataset, one record per step.

    Records are visited in an epoch-seeded shuffled order shared by every
    sub-model. With ``cfg.workers > 1`` sub-models train in separate
    processes between checkpoints; results are bit-identical to sequential
    training because each sub-model only touches its own parameters and RNG
    stream.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.manifest.n != model.n:
        raise ValueError(f"dataset has N={dataset.manifest.n}, model has N={model.n}")
    if tuple(dataset.manifest.shape) != _record_shape(model.desc):
        raise ShapeError(f"dataset shape {dataset.manifest.shape} does not match model {_record_shape(model.desc)}")
    records = [
        (to_batch(r.mixture, model.desc), [to_batch(s, model.desc) for s in r.sources]) for r in dataset.records
    ]
    trainlog = TrainLog()
    interval = cfg.checkpoint_interval or cfg.epochs
    boundaries = list(range(0, cfg.epochs, interval)) + [cfg.epochs]
    pool = None
    if cfg.workers > 1 and model.n > 1:
        pool = ProcessPoolExecutor(max_workers=min(cfg.workers, model.n), mp_context=multiprocessing.get_context("spawn"))
    try:
        for first, last in zip(boundaries[:-1], boundaries[1:]):
            if pool is None:
                _run_sequential(model, records, cfg, first, last, trainlog, on_epoch)
            else:
                tasks = [(sub, i, model.desc, records, cfg, first, last) for i, sub in enumerate(model.subs)]
                results = list(pool.map(_worker_task, tasks))
                chunk = []
                for i, res in enumerate(results):
                    if isinstance(res, NaNLossError):
                        trainlog.extend(_merge(chunk + res.entries))
                        raise NaNLossError(res.submodel, res.step, res.loss_name, trainlog.entries)
                    model.subs[i], entries = res
                    chunk.extend(entries)
                trainlog.extend(_merge(chunk))
            if checkpoint_path is not None:
                from .checkpoint import save_checkpoint

                if last < cfg.epochs:
                    save_checkpoint(model, interim_checkpoint_path(checkpoint_path, last))
                else:
                    save_checkpoint(model, checkpoint_path)
            log.info("epochs %d-%d done", first + 1, last)
    finally:
        if pool is not None:
            pool.shutdown()
    return model, trainlog


def _run_sequential(model, records, cfg, first, last, trainlog, on_epoch):
    with threadpool_limits(1):
        for epoch in range(first, last):
            for idx in epoch_order(cfg.seed, epoch, len(records)):
                u, sources = records[idx]
                for i, sub in enumerate(model.subs):
                    try:
                        trainlog.extend(submodel_step(sub, i, model.desc, u, sources[i], cfg))
                    except NaNLossError as exc:
                        trainlog.extend(exc.entries)
                        raise NaNLossError(exc.submodel, exc.step, exc.loss_name, trainlog.entries) from None
            if on_epoch is not None:
                on_epoch(epoch, model)


def interim_checkpoint_path(path, epoch: int) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.epoch{epoch}{path.suffix}")


def _record_shape(desc: ArchDescriptor) -> tuple:
    if desc.rank == 1:
        return (desc.length,)
    return (desc.length, desc.length, desc.in_channels)


# -- inference -------------------------------------------------------------------

def separate(
    model: PDualGanModel,
    mixture: np.ndarray,
    seed: int = 0,
    passes: int = 1,
    deterministic: bool = False,
    stream: int = 0,
) -> list[np.ndarray]:
    """Estimate the N sources of one mixture: s_i = G_A_i(mixture).

    Dropout stays active (it is the generators' noise input) unless
    ``deterministic`` is set, which is a debugging aid only. With
    ``passes > 1`` the stochastic outputs are averaged. ``stream`` selects
    an independent dropout stream, e.g. one per test record.
    """
    if passes < 1:
        raise ValueError(f"passes must be >= 1, got {passes}")
    x = Tensor(to_batch(np.asarray(mixture, dtype=np.float32), model.desc))
    out = []
    with no_grad(), threadpool_limits(1):
        for i, sub in enumerate(model.subs):
            rng = np.random.default_rng([substream(seed, i), 1 << 30, stream])
            acc = None
            for _ in range(passes):
                y = generator_forward(sub.ga, model.desc, x, rng, noise=not deterministic).data.astype(np.float64)
                acc = y if acc is None else acc + y
            out.append(from_batch(acc / passes, model.desc))
    return out
