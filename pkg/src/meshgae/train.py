"""MSE objective, the mini-batched Adam loop with a plateau scheduler, and RMSE evaluation."""
import csv
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DimensionError, NumericError
from .graph import batch_graphs, bind_snapshot
from .nn import adam_update, clip_grad_norm, save_params

METRIC_COLUMNS = ("epoch", "train_mse", "val_mse", "lr", "seconds")


class TrainingAborted(NumericError):
    def __init__(self, message, epoch, batch, lr):
        super().__init__(f"{message} (epoch {epoch}, batch {batch}, lr {lr:.3e})")
        self.epoch, self.batch, self.lr = epoch, batch, lr


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr0: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 10
    rel_improvement: float = 1e-3
    max_epochs: int = 100
    seed: int = 0
    checkpoint_every: int = 1
    grad_clip: float = 1.0
    # members evaluated per forward pass; gradients are accumulated across
    # passes so the update is the same as for the whole batch at once
    micro_batch: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.lr_decay < 1:
            raise ConfigError("lr_decay must be in (0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be >= 0")
        if self.max_epochs < 0 or self.checkpoint_every < 1 or self.micro_batch < 0:
            raise ConfigError("max_epochs, checkpoint_every and micro_batch must be non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive (or None to disable)")


def mse_loss(recon, target):
    """Mean of squared differences over all N * F entries."""
    r, t = ag.as_tensor(recon), ag.as_tensor(target)
    if r.shape != t.shape:
        raise DimensionError(f"reconstruction {r.shape} vs target {t.shape}")
    return ag.mse(r, t)


def _chunks(seq, size):
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def _sq_error(model, samples, batch_size):
    """Sum of squared reconstruction errors and entry count, without taping."""
    total, count = 0.0, 0
    for chunk in _chunks(samples, batch_size):
        g = batch_graphs(chunk)
        recon, _ = model.reconstruct(g)
        d = recon - g.x
        total += float((d * d).sum())
        count += d.size
    return total, count


def evaluate_mse(model, samples, batch_size=8):
    if not samples:
        return float("nan")
    s, n = _sq_error(model, samples, batch_size)
    return s / n


def _write_metrics(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in METRIC_COLUMNS[1:]])


def fit(model, train_set, val_set, cfg, run_dir=None, log=None, clock=time.perf_counter):
    """Train ``model`` in place and leave it holding the best-validation parameters.

    ``train_set`` and ``val_set`` are lists of graphs whose node attributes are
    standardised snapshots. Returns ``(best parameter state, history)``.
    ``clock`` feeds the ``seconds`` column; pass a constant for reproducible logs.
    """
    if not train_set:
        raise ConfigError("empty training set")
    params = model.params
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr0
    history = []
    best_val, best_state = math.inf, params.state()
    plateau_ref, bad_epochs = math.inf, 0
    t0 = clock()
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
    micro = cfg.micro_batch or cfg.batch_size

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        run_sq, run_n = 0.0, 0
        for b, idx in enumerate(_chunks(order, cfg.batch_size)):
            params.zero_grad()
            members = [train_set[i] for i in idx]
            n_total = sum(g.n_nodes for g in members) * model.config.input_features
            try:
                for part in _chunks(members, micro):
                    g = batch_graphs(part)
                    recon, _ = model.autoencode(g)
                    loss = mse_loss(recon, g.x)
                    # weight so the accumulated gradient is that of the whole batch
                    ag.backward(ag.mul(loss, recon.data.size / n_total))
                    run_sq += float(loss.data) * recon.data.size
                    run_n += recon.data.size
            except NumericError as exc:
                raise TrainingAborted(str(exc), epoch, b, lr) from exc
            if not math.isfinite(params.grad_norm()):
                raise TrainingAborted("non-finite gradient", epoch, b, lr)
            if cfg.grad_clip is not None:
                clip_grad_norm(params, cfg.grad_clip)
            adam_update(params, lr)
        train_mse = run_sq / run_n
        val_mse = evaluate_mse(model, val_set, cfg.batch_size) if val_set else train_mse
        if not math.isfinite(val_mse):
            raise TrainingAborted("non-finite validation loss", epoch, -1, lr)
        row = {"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "lr": lr,
               "seconds": clock() - t0}
        history.append(row)
        if log is not None:
            log(row)

        if val_mse < best_val:
            best_val, best_state = val_mse, params.state()
            if run_dir is not None:
                save_params(params, os.path.join(run_dir, "best.ckpt"))
        # plateau scheduler: decay after `patience` epochs without a relative gain
        if val_mse < plateau_ref * (1.0 - cfg.rel_improvement):
            plateau_ref, bad_epochs = val_mse, 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                lr *= cfg.lr_decay
                bad_epochs = 0
        if run_dir is not None:
            _write_metrics(os.path.join(run_dir, "metrics.csv"), history)
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.max_epochs:
                save_params(params, os.path.join(run_dir, "last.ckpt"))

    if run_dir is not None:
        if not history:
            save_params(params, os.path.join(run_dir, "best.ckpt"))
            save_params(params, os.path.join(run_dir, "last.ckpt"))
        _write_metrics(os.path.join(run_dir, "metrics.csv"), history)
    params.load_state(best_state)
    return best_state, history


def rmse_from_arrays(recon, target, u_in):
    """Per-feature RMSE over all snapshots and nodes, divided by ``u_in``."""
    if not u_in > 0:
        raise ConfigError(f"u_in must be positive, got {u_in}")
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise DimensionError(f"reconstruction {recon.shape} vs target {target.shape}")
    d = (recon - target).reshape(-1, recon.shape[-1])
    return np.sqrt((d * d).mean(axis=0)) / u_in


def evaluate_rmse(model, graph, test_set, stdzr, batch_size=8):
    """Normalised RMSE per feature, computed in physical units.

    ``graph`` is the trajectory's input graph and ``test_set`` a standardised
    :class:`SnapshotSet`; reconstructions are mapped back through ``stdzr``.
    """
    u_in = test_set.u_in
    if not u_in > 0:
        raise ConfigError(f"u_in must be positive, got {u_in}")
    recons = []
    for chunk in _chunks(list(test_set.snapshots), batch_size):
        g = batch_graphs([bind_snapshot(graph, x) for x in chunk])
        r, _ = model.reconstruct(g)
        recons.append(r.reshape(len(chunk), graph.n_nodes, -1))
    recon = stdzr.inverse(np.concatenate(recons))
    target = stdzr.inverse(test_set.snapshots)
    return rmse_from_arrays(recon, target, u_in)
