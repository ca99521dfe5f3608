"""Training loop, optimizer, dataset splitting, and gradient verification."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import (ModelConfig, assemble_batch, batch_loss, forward,
                    forward_batch, init_params, param_count, zero_grads)


@dataclass
class Split:
    train: list
    val: list
    test: list
    seed: int = 0


def split_dataset(examples, ratios=(0.8, 0.1, 0.1), seed=0) -> Split:
    """Seeded shuffle then contiguous cut at segment level."""
    if not examples:
        raise ValueError("empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    order = np.random.default_rng(seed).permutation(len(examples))
    n = len(examples)
    n_train = round(n * ratios[0])
    n_val = round(n * ratios[1])
    idx = [examples[i] for i in order]
    return Split(train=idx[:n_train], val=idx[n_train:n_train + n_val],
                 test=idx[n_train + n_val:], seed=seed)


def backward(examples, params, config, store, graph, rng=None, train=False):
    """Gradients of the mean combined loss over the batch for every named
    tensor.  Returns (grads dict, metrics dict)."""
    zero_grads(params)
    loss, metrics = batch_loss(examples, params, config, store, graph,
                               rng=rng, train=train)
    loss.backward()
    grads = {}
    for name, tensor in params.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for tensor {name!r}")
        grads[name] = g
    return grads, metrics


def gradient_check(examples, params, config, store, graph, step=1e-5,
                   tensors=None):
    """Central finite differences vs reverse-mode, per named tensor.

    Parameters must be float64.  Returns {name: max relative error}.
    """
    grads, _ = backward(examples, params, config, store, graph)

    batch = assemble_batch(examples, store, config, graph)

    def loss_value():
        res = forward_batch(batch, params, config)
        return float(res.loss.data)

    errors = {}
    names = tensors if tensors is not None else sorted(params)
    for name in names:
        tensor = params[name]
        flat = tensor.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            num[i] = (up - down) / (2.0 * step)
        ana = grads[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-8)
        errors[name] = float(np.max(np.abs(num - ana) / denom))
    return errors


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict):
        if self.clip_norm > 0:
            total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                                for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.step += 1
        b1c = 1.0 - self.beta1 ** self.step
        b2c = 1.0 - self.beta2 ** self.step
        for name in sorted(params):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            params[name].data = params[name].data - (
                self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            ).astype(params[name].data.dtype)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_acc1: float
    val_mrr: float
    seconds: float


def evaluate_ranking(examples, params, config, store, graph, batch_size=64):
    """Quick Acc@1 / MRR over a list of examples (pessimistic tie rank)."""
    from .evaluation import rank_of_label
    if not examples:
        return 0.0, 0.0
    ranks = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        res = forward_batch(assemble_batch(chunk, store, config, graph),
                            params, config, with_loss=False)
        for i, ex in enumerate(chunk):
            ranks.append(rank_of_label(res.scores[i, :len(ex.candidates)],
                                       ex.candidates, ex.label))
    ranks = np.array(ranks)
    return float((ranks == 1).mean()), float((1.0 / ranks).mean())


def train(train_examples, val_examples, config: ModelConfig, store, graph,
          epochs=10, batch_size=16, lr=1e-4, seed=0, dtype=np.float32,
          log_fn=None, params=None):
    """Adam training with seeded per-epoch shuffles.

    Returns (final params, best-val params, list of EpochLog).
    """
    if not train_examples:
        raise ValueError("empty train split")
    if params is None:
        params = init_params(config, dtype=dtype)
    opt = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    logs = []
    best_acc = -1.0
    best_snapshot = {k: t.data.copy() for k, t in params.items()}
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_examples))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), batch_size):
            batch = [train_examples[i] for i in order[lo:lo + batch_size]]
            drop_rng = np.random.default_rng([seed, epoch, lo])
            try:
                grads, metrics = backward(batch, params, config, store, graph,
                                          rng=drop_rng, train=True)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"divergence at epoch {epoch} batch {lo // batch_size}: {exc}"
                ) from exc
            if not np.isfinite(metrics["loss"]):
                raise FloatingPointError(
                    f"divergence at epoch {epoch} batch {lo // batch_size}")
            opt.update(params, grads)
            epoch_loss += metrics["loss"]
            n_batches += 1
        val_acc1, val_mrr = evaluate_ranking(val_examples, params, config, store, graph)
        log = EpochLog(epoch=epoch, train_loss=epoch_loss / max(1, n_batches),
                       val_acc1=val_acc1, val_mrr=val_mrr,
                       seconds=time.perf_counter() - t0)
        logs.append(log)
        if log_fn:
            log_fn(log)
        if val_acc1 >= best_acc:
            best_acc = val_acc1
            best_snapshot = {k: t.data.copy() for k, t in params.items()}
    best_params = init_params(config, dtype=dtype)
    for k, t in best_params.items():
        t.data = best_snapshot[k]
    return params, best_params, logs


def train_nodes(examples) -> set:
    """Nodes appearing in training examples; the normalizer/embedding fit set."""
    nodes = set()
    for ex in examples:
        nodes.update(int(v) for v in ex.context)
        nodes.update(int(u) for u in ex.candidates)
    return nodes
