"""Full-batch training with Adam and early stopping on validation accuracy."""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .models import GraphData, ModelConfig, build_model


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 500
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list
    best_epoch: int
    val_acc: float
    test_acc: float
    train_acc: float
    epochs_run: int
    wall_time: float
    state: dict = field(repr=False, default_factory=dict)


def accuracy(logits, y, mask) -> float:
    if mask.sum() == 0:
        return float("nan")
    return float((logits[mask].argmax(-1) == y[mask]).double().mean())


def masked_loss(model, data: GraphData, mask, norm_cache=None):
    if mask.sum() == 0:
        raise ValueError("empty mask: no labelled nodes selected")
    logits = model(data, norm_cache=norm_cache)
    return F.cross_entropy(logits[mask], data.y[mask]), logits


def loss_and_gradients(model, data: GraphData, mask, norm_cache=None):
    """Mean cross-entropy on ``mask`` and its gradient for every learnable parameter.

    Degree-normalisation blocks never enter the autograd graph; pass the same
    ``norm_cache`` dict to later calls to reuse them verbatim.
    """
    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    loss, _ = masked_loss(model, data, mask, norm_cache)
    if not params:
        return float(loss.detach()), {}
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        out[name] = np.zeros(p.shape) if g is None else g.detach().numpy().copy()
    return float(loss.detach()), out


def finite_difference_check(model, data: GraphData, mask, probes: int = 50, h: float = 1e-5, seed: int = 0):
    """Compare autograd against central differences at ``probes`` random coordinates.

    The normalisation blocks are frozen at the unperturbed parameters for
    both sides, matching their detachment from backpropagation.
    Returns a list of ``(name, flat_index, analytic, numeric, rel_err)``.
    """
    cache: dict = {}
    _, grads = loss_and_gradients(model, data, mask, cache)
    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    if not params:
        return []
    names = list(params)
    sizes = np.array([params[n].numel() for n in names])
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(probes):
        k = rng.choice(len(names), p=sizes / sizes.sum())
        name = names[k]
        idx = int(rng.integers(sizes[k]))
        flat = params[name].data.view(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + h
            lp = float(masked_loss(model, data, mask, cache)[0])
            flat[idx] = orig - h
            lm = float(masked_loss(model, data, mask, cache)[0])
            flat[idx] = orig
        numeric = (lp - lm) / (2 * h)
        analytic = float(grads[name].reshape(-1)[idx])
        rel = abs(analytic - numeric) / max(1.0, abs(analytic))
        out.append((name, idx, analytic, numeric, rel))
    return out


def train(config: ModelConfig, data: GraphData, tcfg: TrainConfig = TrainConfig(), model=None) -> TrainResult:
    """Train from scratch (or from ``model``) and keep the best-validation checkpoint."""
    t0 = time.perf_counter()
    if model is None:
        model = build_model(config, data.x.shape[1], data.n_classes, seed=tcfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=tcfg.lr, weight_decay=tcfg.weight_decay) if params else None
    train_m, val_m = data.masks["train"], data.masks["val"]
    test_m = data.masks.get("test", val_m)
    best = {"val": -1.0, "epoch": -1, "state": None, "test": float("nan"), "train": float("nan")}
    history = []
    epoch = 0
    for epoch in range(tcfg.epochs):
        model.train()
        loss, logits = masked_loss(model, data, train_m)
        if not torch.isfinite(loss):
            raise TrainingDivergence(f"non-finite training loss {float(loss)} at epoch {epoch}")
        with torch.no_grad():
            row = {
                "epoch": epoch,
                "loss": float(loss),
                "train_acc": accuracy(logits, data.y, train_m),
                "val_acc": accuracy(logits, data.y, val_m),
                "test_acc": accuracy(logits, data.y, test_m),
            }
        history.append(row)
        if row["val_acc"] > best["val"]:
            best.update(val=row["val_acc"], epoch=epoch, test=row["test_acc"], train=row["train_acc"],
                        state=copy.deepcopy(model.state_dict()))
        if epoch - best["epoch"] >= tcfg.patience:
            break
        if opt is not None:
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.load_state_dict(best["state"])
    return TrainResult(model, history, best["epoch"], best["val"], best["test"], best["train"],
                       epoch + 1, time.perf_counter() - t0, best["state"])
