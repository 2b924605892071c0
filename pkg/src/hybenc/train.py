"""MLM pretraining loop at desk scale, plus a small classification path.

Fixed seed + config gives byte-identical checkpoints: batch sampling, MLM
corruption and dropout all draw from counter-based streams keyed by
(seed, purpose, step).
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import IGNORE, BatchEncoding, make_batch, mlm_mask_batch
from .errors import ConfigError, DegenerateBatchError, TrainingDivergedError
from .model import ClassifierModel, MLMModel, state_arrays
from .nn import DropoutCtx, keyed_rng
from .optim import AdamState, TrainConfig, adam_step
from .tensor import Tensor

METRICS_HEADER = ["step", "loss", "masked_acc", "lr", "wall_ms"]


def mlm_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over labeled positions only."""
    labels = np.asarray(labels)
    bi, ti = np.nonzero(labels != IGNORE)
    if bi.size == 0:
        raise DegenerateBatchError("mlm_loss: batch has no labeled position")
    lsm = T.log_softmax(logits)
    picked = lsm[(bi, ti, labels[bi, ti])]
    return T.scale(T.tensor_sum(picked), -1.0 / bi.size)


def masked_accuracy(logits: Tensor, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    sel = labels != IGNORE
    if not sel.any():
        return float("nan")
    pred = logits.data.argmax(axis=-1)
    return float((pred[sel] == labels[sel]).mean())


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    targets = np.asarray(targets)
    lsm = T.log_softmax(logits)
    picked = lsm[(np.arange(targets.size), targets)]
    return T.scale(T.tensor_sum(picked), -1.0 / targets.size)


def _param_norm_report(named_params: dict) -> str:
    rows = sorted(named_params.items(), key=lambda kv: -float(np.abs(kv[1].data).max()))[:5]
    return "; ".join(f"{k}: max|p|={np.abs(v.data).max():.3e}" for k, v in rows)


def _crop(seq: list[int], max_len: int | None) -> list[int]:
    if max_len is None or len(seq) + 2 <= max_len:
        return seq
    return seq[: max_len - 2]


def sample_mlm_batch(corpus: list[list[int]], cfg: TrainConfig, V: int, step: int,
                     max_len: int | None = None) -> BatchEncoding:
    rng = keyed_rng(cfg.seed, "batch", step)
    idx = rng.integers(0, len(corpus), size=cfg.batch_size)
    batch = make_batch([_crop(corpus[i], max_len) for i in idx], V)
    mlm_rng = keyed_rng(cfg.seed, "mlm", step)
    return mlm_mask_batch(batch, mlm_rng, V, p=cfg.mlm_prob, split=cfg.replace_split)


def train_loop(model: MLMModel, corpus: list[list[int]], cfg: TrainConfig, out_dir: str,
               log=None) -> dict:
    """Run MLM pretraining; emits metrics.csv and checkpoint(s) in out_dir."""
    if not corpus:
        raise ConfigError("corpus is empty")
    os.makedirs(out_dir, exist_ok=True)
    params = model.named_parameters()
    state = AdamState()
    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    config_dict = {"encoder": asdict(model.config), "train": _train_config_dict(cfg)}

    def save_ckpt(path):
        checkpoint.save(path, state_arrays(model), config_dict)

    last = {"loss": float("nan"), "masked_acc": float("nan")}
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        if cfg.total_steps == 0:
            save_ckpt(ckpt_path)
            return {"steps": 0, "checkpoint": ckpt_path, "metrics": metrics_path, **last}
        for step in range(1, cfg.total_steps + 1):
            t0 = time.perf_counter()
            max_len = _phase_max_len(cfg, step)
            batch = sample_mlm_batch(corpus, cfg, model.config.V, step, max_len)
            ctx = DropoutCtx(train=True, seed=cfg.seed, step=step)
            logits = model.forward(batch.ids, batch.m, ctx)
            loss = mlm_loss(logits, batch.labels)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}; {_param_norm_report(params)}")
            grads = T.gradients(loss, params)
            lr = adam_step(params, grads, state, step, cfg)
            wall_ms = (time.perf_counter() - t0) * 1e3
            acc = masked_accuracy(logits, batch.labels)
            writer.writerow([step, f"{loss.item():.6f}", f"{acc:.6f}", f"{lr:.8f}", f"{wall_ms:.3f}"])
            last = {"loss": loss.item(), "masked_acc": acc}
            if log is not None:
                log({"step": step, "loss": loss.item(), "masked_acc": acc, "lr": lr})
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_ckpt(os.path.join(out_dir, f"checkpoint-{step:06d}.bin"))
    save_ckpt(ckpt_path)
    return {"steps": cfg.total_steps, "checkpoint": ckpt_path, "metrics": metrics_path, **last}


def _phase_max_len(cfg: TrainConfig, step: int) -> int | None:
    if cfg.max_len_phase1 is None:
        return None
    if step <= cfg.phase_split * cfg.total_steps:
        return cfg.max_len_phase1
    return cfg.max_len_phase2 or cfg.max_len_phase1


def _train_config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["replace_split"] = list(d["replace_split"])
    return d


def finetune_loop(model: ClassifierModel, examples: list[tuple[list[int], int]],
                  cfg: TrainConfig, out_dir: str, log=None) -> dict:
    """Tiny classification fine-tune exercising pooling + head."""
    if not examples:
        raise ConfigError("no labeled examples")
    os.makedirs(out_dir, exist_ok=True)
    params = model.named_parameters()
    state = AdamState()
    last_loss = float("nan")
    for step in range(1, cfg.total_steps + 1):
        rng = keyed_rng(cfg.seed, "ft_batch", step)
        idx = rng.integers(0, len(examples), size=cfg.batch_size)
        seqs = [examples[i][0] for i in idx]
        targets = np.array([examples[i][1] for i in idx])
        batch = make_batch(seqs, model.config.V)
        ctx = DropoutCtx(train=True, seed=cfg.seed, step=step)
        logits = model.forward(batch.ids, batch.m, ctx)
        loss = cross_entropy(logits, targets)
        if not np.isfinite(loss.item()):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        grads = T.gradients(loss, params)
        adam_step(params, grads, state, step, cfg)
        last_loss = loss.item()
        if log is not None:
            log({"step": step, "loss": last_loss})
    ckpt_path = os.path.join(out_dir, "classifier.bin")
    checkpoint.save(ckpt_path, state_arrays(model),
                    {"encoder": asdict(model.config), "train": _train_config_dict(cfg)},
                    extra={"n_classes": int(model.head.W_c.shape[0]), "pooling": model.pooling})
    return {"steps": cfg.total_steps, "loss": last_loss, "checkpoint": ckpt_path}


def evaluate_classifier(model: ClassifierModel, examples: list[tuple[list[int], int]]) -> float:
    correct = 0
    with T.no_grad():
        for seq, label in examples:
            batch = make_batch([seq], model.config.V)
            logits = model.forward(batch.ids, batch.m)
            correct += int(logits.data.argmax(axis=-1)[0] == label)
    return correct / len(examples)
