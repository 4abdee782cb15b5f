"""Training loop: L1 waveform objective, Adam with decoupled weight
decay, plateau learning-rate decay, curriculum staging, and resumable
checkpoints.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .datagen import length_bucket_batches
from .errors import ConfigError, NumericsError, ShapeError
from .tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    weight_decay: float = 1e-4
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 3
    lr_decay: float = 0.8
    max_steps: int = 2000
    epochs: int = 50
    seed: int = 0
    curriculum: tuple = (("separation", 50),)
    dropout: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError(f"lr decay factor must be in (0, 1), got {self.lr_decay}")


def l1_loss(estimate, target):
    """Mean absolute difference between two equal-length waveforms."""
    if isinstance(target, Tensor):
        t = target
    else:
        t = Tensor(np.asarray(target, dtype=estimate.data.dtype))
    if estimate.data.shape != t.data.shape:
        raise ShapeError(
            f"l1_loss: length mismatch {estimate.data.shape} vs {t.data.shape}"
        )
    return T.mean(T.abs_(T.sub(estimate, t)))


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One Adam update with decoupled weight decay over ``params``."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.data -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p.data)


def train_step(model, batch, cfg, state, lr, frozen=(), rng=None):
    """Forward/backward over one length-bucketed batch, then update.

    Returns the mean L1 loss.  Gradients from batch elements accumulate
    additively; the parameter update is a single serialized Adam step.
    """
    model.zero_grad()
    total = 0.0
    scale = 1.0 / len(batch)
    for sample in batch:
        net_mix = model.prepare_audio(sample.mixture)
        net_target = model.prepare_audio(sample.target)
        n = min(len(net_mix), len(net_target))
        est, _ = model.forward(
            net_mix[:n], sample.features, sample.transcript, train=True, rng=rng
        )
        loss = T.scale(l1_loss(est, net_target[:n]), scale)
        if not np.isfinite(loss.data):
            raise NumericsError(
                f"NaN/Inf loss at step {state.t + 1} (lr={lr:g}, sample={sample.sample_id})"
            )
        T.backward(loss)
        total += float(loss.data)
    trainable = model.trainable(frozen)
    grad_norm = np.sqrt(
        sum(float((p.grad**2).sum()) for p in trainable.values() if p.grad is not None)
    )
    if not np.isfinite(grad_norm):
        raise NumericsError(f"non-finite gradient norm at step {state.t + 1} (lr={lr:g})")
    adam_step(trainable, state, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    return total


def curriculum_schedule(stages):
    """Expand [(stage, epochs), ...] into a per-epoch stage list."""
    if not stages:
        raise ConfigError("curriculum: empty schedule")
    out = []
    for stage, epochs in stages:
        if stage not in ("separation", "denoising"):
            raise ConfigError(f"curriculum: unknown stage {stage!r}")
        out.extend([stage] * int(epochs))
    if not out:
        raise ConfigError("curriculum: schedule has zero total epochs")
    return out


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    best_loss: float = np.inf
    steps: int = 0
    stage_boundaries: list = field(default_factory=list)


def _save_trainer_state(path, model, state, rng, extra):
    arrays = {f"param.{k}": v.data for k, v in model.params.items()}
    arrays.update({f"adam_m.{k}": v for k, v in state.m.items()})
    arrays.update({f"adam_v.{k}": v for k, v in state.v.items()})
    meta = dict(extra)
    meta["adam_t"] = state.t
    meta["rng_state"] = rng.bit_generator.state
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def _load_trainer_state(path, model, state, rng):
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        for k in model.params:
            model.params[k].data = z[f"param.{k}"]
            if f"adam_m.{k}" in z:
                state.m[k] = z[f"adam_m.{k}"]
                state.v[k] = z[f"adam_v.{k}"]
    state.t = int(meta["adam_t"])
    rng.bit_generator.state = meta["rng_state"]
    return meta


def train(model, make_epoch_samples, cfg, out_dir=None, frozen=(), resume=False,
          log=None):
    """Run the full training loop.

    ``make_epoch_samples(stage, epoch, rng)`` returns the epoch's
    MixtureSample list; samples are bucketed by length so batches never
    mix very different durations.  Per-epoch and best checkpoints plus a
    loss-curve CSV land in ``out_dir`` when given.  With ``resume=True``
    training continues bit-exactly from the saved trainer state.
    """
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    stages = curriculum_schedule(cfg.curriculum)[: cfg.epochs]
    result = TrainResult()
    lr = cfg.learning_rate
    best = np.inf
    since_improved = 0
    start_epoch = 0
    state_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        state_path = os.path.join(out_dir, "trainer_state.npz")
    if resume:
        if not (state_path and os.path.exists(state_path)):
            raise ConfigError("resume requested but no trainer_state.npz found")
        meta = _load_trainer_state(state_path, model, state, rng)
        start_epoch = meta["epoch"] + 1
        lr = meta["lr"]
        best = meta["best"]
        since_improved = meta["since_improved"]
    prev_stage = None
    for epoch in range(start_epoch, len(stages)):
        stage = stages[epoch]
        if stage != prev_stage:
            result.stage_boundaries.append((epoch, stage))
            prev_stage = stage
        samples = make_epoch_samples(stage, epoch, rng)
        batches = length_bucket_batches(
            samples, cfg.batch_size, length_key=lambda s: len(s.mixture)
        )
        epoch_loss = 0.0
        n_batches = 0
        for batch in batches:
            if state.t >= cfg.max_steps:
                break
            epoch_loss += train_step(model, batch, cfg, state, lr, frozen, rng)
            n_batches += 1
        if n_batches:
            epoch_loss /= n_batches
        result.losses.append(epoch_loss)
        result.steps = state.t
        if log:
            log(f"epoch {epoch} stage={stage} loss={epoch_loss:.6f} lr={lr:g} "
                f"step={state.t}")
        if epoch_loss < best - 1e-12:
            best = epoch_loss
            since_improved = 0
            if out_dir:
                model.save(os.path.join(out_dir, "best.vfck"))
        else:
            since_improved += 1
            if since_improved >= cfg.plateau_patience:
                lr *= cfg.lr_decay
                since_improved = 0
        if out_dir:
            model.save(os.path.join(out_dir, f"epoch{epoch:03d}.vfck"))
            model.save(os.path.join(out_dir, "last.vfck"))
            _save_trainer_state(state_path, model, state, rng, {
                "epoch": epoch, "lr": lr, "best": best,
                "since_improved": since_improved,
            })
        if state.t >= cfg.max_steps:
            break
    result.best_loss = best
    if out_dir:
        with open(os.path.join(out_dir, "loss_curve.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "stage", "loss"])
            stage_of = dict(result.stage_boundaries)
            current = stages[0]
            for i, loss in enumerate(result.losses):
                current = stage_of.get(start_epoch + i, current)
                writer.writerow([start_epoch + i, current, f"{loss:.8g}"])
    return result
