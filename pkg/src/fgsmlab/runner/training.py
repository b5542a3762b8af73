"""FGSM adversarial training with optional GradAlign / orthogonality terms."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .. import autodiff as ad
from ..attacks import AttackSpec, fgsm
from ..data import Dataset, load_cifar10_dir, subset, synthetic_dataset, write_cifar10
from ..metrics import (MetricsRecord, accuracy, attacked_images, local_linearity,
                       robust_accuracy)
from ..nn import Cnn5Params, cnn5_forward, cross_entropy, init_params
from ..regularizers import gradalign_penalty, orth_penalty, orthogonality_gap
from ..rng import stream
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import SETTINGS, TrainConfig

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"


@dataclass
class StepResult:
    params: Cnn5Params
    velocity: list
    loss: float
    terms: dict = field(default_factory=dict)


def total_loss(params: Cnn5Params, x: np.ndarray, y, config: TrainConfig, rng=None):
    """Build the training objective on the tape; returns (loss tensor, term values)."""
    x_adv = fgsm(params, x, y, config.attack)
    terms = {"fgsm_ce": cross_entropy(cnn5_forward(params, ad.Tensor(x_adv)), y)}
    reg = config.reg
    if reg.lambda_ga > 0:
        ga = gradalign_penalty(params, x, y, config.epsilon, reg.ga_samples, reg.tau,
                               create_graph=True, rng=rng)
        terms["gradalign"] = ga
    if reg.lambda_orth > 0:
        terms["orth"] = orth_penalty(params, reg.orth_layers)
    loss = terms["fgsm_ce"]
    if "gradalign" in terms:
        loss = ad.add(loss, ad.scalar_mul(terms["gradalign"], reg.lambda_ga))
    if "orth" in terms:
        loss = ad.add(loss, ad.scalar_mul(terms["orth"], reg.lambda_orth))
    values = {k: v.item() for k, v in terms.items()}
    for name, v in values.items():
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite {name} term in the training loss ({v})")
    return loss, values


def train_step(params: Cnn5Params, velocity: Optional[list], x: np.ndarray, y,
               config: TrainConfig, rng=None) -> StepResult:
    """One momentum-SGD step on the FGSM-AT objective: v <- mu v + g; theta <- theta - lr v."""
    loss, terms = total_loss(params, x, y, config, rng)
    grads = ad.grad(loss, params.tensors())
    if velocity is None:
        velocity = [np.zeros_like(t.data) for t in params.tensors()]
    dt = params.dtype.type
    mu, lr = dt(config.momentum), dt(config.learning_rate)
    new_v, new_p = [], {}
    for (name, t), v, g in zip(params.items(), velocity, grads):
        if not np.all(np.isfinite(g.data)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        v = mu * v + g.data
        new_v.append(v)
        new_p[name] = t.data - lr * v
    return StepResult(Cnn5Params.from_arrays(new_p, dtype=params.dtype), new_v,
                      loss.item(), terms)


def load_datasets(config: TrainConfig) -> tuple[Dataset, Dataset]:
    """Train and evaluation subsets named by the config."""
    if config.dataset == "synthetic":
        train = synthetic_dataset(config.seed, config.train_n, dtype=config.dtype)
        test = synthetic_dataset(config.seed + 1, config.eval_n, dtype=config.dtype)
        return train, test
    train = load_cifar10_dir(config.data_dir, "train", config.dtype)
    test = load_cifar10_dir(config.data_dir, "test", config.dtype)
    return subset(train, config.train_n, config.seed), subset(test, config.eval_n, config.seed)


def evaluate_params(params: Cnn5Params, dataset: Dataset, eval_attack: AttackSpec, *,
                    epoch: int, train_loss: float, epsilon: float, ll_samples: int,
                    ll_n: int, tau: float, seed: int, pgd_rng=None, ll_rng=None,
                    wall_seconds: float = 0.0) -> MetricsRecord:
    clean = accuracy(params, dataset)
    robust = robust_accuracy(params, dataset, eval_attack,
                             pgd_rng if pgd_rng is not None else seed)
    ll_set = subset(dataset, min(ll_n, len(dataset)), seed)
    ll = local_linearity(params, ll_set.images, ll_set.labels, epsilon, ll_samples, tau,
                         ll_rng if ll_rng is not None else seed)
    gap = float(np.mean(orthogonality_gap(params)))
    return MetricsRecord(epoch, train_loss, clean, robust, ll, gap, wall_seconds)


@dataclass
class TrainResult:
    history: list
    params: Cnn5Params
    run_dir: Path
    checkpoint_path: Path


def train(config: TrainConfig, datasets: Optional[tuple] = None) -> TrainResult:
    """Run FGSM-AT for ``config.epochs`` epochs, evaluating after each one.

    Writes ``config.json``, ``metrics.csv`` and checkpoints to ``config.run_dir``.
    """
    train_set, eval_set = datasets or load_datasets(config)
    train_set = train_set.astype(config.dtype)
    eval_set = eval_set.astype(config.dtype)
    run_dir = config.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config.to_json(), encoding="utf-8")
    digest = config.digest()

    params = init_params(config.seed, config.dtype)
    velocity = None
    history = []
    ckpt_path = run_dir / "final.ckpt"
    n = len(train_set)
    log.info("training %s: %d examples, %d epochs", run_dir.name, n, config.epochs)

    with open(run_dir / METRICS_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MetricsRecord.header())
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            order = stream(config.seed, "shuffle", epoch).permutation(n)
            eta_rng = stream(config.seed, "eta", epoch)
            losses = []
            for i in range(0, n, config.batch_size):
                idx = order[i:i + config.batch_size]
                step = train_step(params, velocity, train_set.images[idx],
                                  train_set.labels[idx], config, eta_rng)
                params, velocity = step.params, step.velocity
                losses.append(step.loss)
            elapsed = time.perf_counter() - start
            record = evaluate_params(
                params, eval_set, config.eval_attack, epoch=epoch,
                train_loss=float(np.mean(losses)), epsilon=config.epsilon,
                ll_samples=config.ll_samples, ll_n=config.ll_n, tau=config.tau,
                seed=config.seed, pgd_rng=stream(config.seed, "pgd-init", epoch),
                ll_rng=stream(config.seed, "ll-eta", epoch),
                wall_seconds=elapsed if config.record_wall_time else 0.0)
            log.info("epoch %d: loss %.4f clean %.3f robust %.3f ll %.3f gap %.4f (%.1fs)",
                     epoch, record.train_loss, record.clean_acc, record.robust_acc,
                     record.local_linearity, record.orth_gap, time.perf_counter() - start)
            history.append(record)
            writer.writerow(record.row())
            fh.flush()
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_checkpoint(Checkpoint.from_params(params, epoch, digest),
                                run_dir / f"epoch{epoch:04d}.ckpt")
    save_checkpoint(Checkpoint.from_params(params, config.epochs, digest), ckpt_path)
    return TrainResult(history, params, run_dir, ckpt_path)


def train_all_settings(config: TrainConfig, datasets: Optional[tuple] = None) -> dict:
    """Train none / gradalign / orth / both, one run directory each."""
    datasets = datasets or load_datasets(config)
    return {s: train(config.with_setting(s), datasets) for s in SETTINGS}


def _as_checkpoint(checkpoint: Union[Checkpoint, str, Path]) -> Checkpoint:
    if isinstance(checkpoint, Checkpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def evaluate(checkpoint, dataset: Dataset, eval_attack: AttackSpec, seed: int = 0, *,
             ll_samples: int = 10, ll_n: int = 256, tau: float = 1e-12,
             dtype=np.float32) -> MetricsRecord:
    """One metrics row for a saved model.

    There is no training loss for a checkpoint, so ``train_loss`` holds the
    clean cross-entropy on ``dataset``.
    """
    ckpt = _as_checkpoint(checkpoint)
    params = ckpt.params(dtype)
    dataset = dataset.astype(dtype)
    with ad.no_grad():
        clean_loss = 0.0
        for i in range(0, len(dataset), 500):
            xb = ad.Tensor(dataset.images[i:i + 500])
            clean_loss += cross_entropy(cnn5_forward(params, xb), dataset.labels[i:i + 500],
                                        reduction="sum").item()
    return evaluate_params(params, dataset, eval_attack, epoch=ckpt.epoch,
                           train_loss=clean_loss / len(dataset), epsilon=eval_attack.epsilon,
                           ll_samples=ll_samples, ll_n=ll_n, tau=tau, seed=seed)


def emit_adversarial_set(checkpoint, dataset: Dataset, attack_spec: AttackSpec, seed: int,
                         out_path, dtype=np.float32) -> Dataset:
    """Attack ``dataset`` against the checkpoint and write it in CIFAR-10 binary form.

    Pixels are stored with 8 bits, so iterates off the 1/255 grid are rounded.
    """
    params = _as_checkpoint(checkpoint).params(dtype)
    dataset = dataset.astype(dtype)
    adv = attacked_images(params, dataset, attack_spec, seed)
    out = Dataset(adv, dataset.labels, f"{dataset.name}-adv")
    write_cifar10(out, out_path)
    return out
