"""Training loops, checkpoints and logs for the denoiser and classifier."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .model import (KeywordClassifier, SpectrogramDenoiser, elementwise_loss,
                    lr_at_epoch)


@dataclass
class DenoiserHyperparams:
    lr: float = 0.001
    epochs: int = 30
    decay_gamma: float = 1.0 / math.sqrt(2.0)
    decay_every: int = 5
    loss_norm: str = "l1"
    mel_bins: int = 80
    win_ms: float = 25.0
    blocks: int = 4
    width: int = 192
    heads: int = 4
    batch_size: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss_norm not in ("l1", "l2"):
            raise ValueError("loss_norm must be 'l1' or 'l2'")


def _stack_pairs(pairs):
    """Crop every example to the shortest frame count and stack to tensors."""
    if not pairs:
        raise ValueError("empty dataset")
    t_min = min(x.shape[-1] for x, _ in pairs)
    t_min = min(t_min, min(y.shape[-1] for _, y in pairs))
    xs = np.stack([x[..., :t_min] for x, _ in pairs]).astype(np.float32)
    ys = np.stack([y[..., :t_min] for _, y in pairs]).astype(np.float32)
    return torch.from_numpy(xs), torch.from_numpy(ys)


def split_indices(n: int, seed: int, val_fraction: float = 0.1):
    """Deterministic 90/10 train/validation split."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if n > 1 else 0
    return order[n_val:], order[:n_val]


def stratified_split(labels, seed: int, holdout_per_class: int = 2):
    """Deterministic split keeping class balance: holds out exactly
    holdout_per_class indices of every label value."""
    rng = np.random.default_rng(seed)
    by_class = {}
    for i, label in enumerate(labels):
        by_class.setdefault(label, []).append(i)
    train_idx, test_idx = [], []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        rng.shuffle(idx)
        test_idx.extend(idx[:holdout_per_class].tolist())
        train_idx.extend(idx[holdout_per_class:].tolist())
    return np.array(sorted(train_idx)), np.array(sorted(test_idx))


def train_denoiser(pairs, hp: DenoiserHyperparams = DenoiserHyperparams(),
                   seed: int = 0, checkpoint_path=None, log_path=None):
    """Train the spectrogram denoiser on (X, Y) pairs.

    pairs: sequence of (X, Y) arrays, X shaped (2, M, T), Y (1, M, T).
    Returns (model, log) where log is a list of per-epoch dicts with
    lr / train_loss / val_loss. Fully deterministic for a given seed.
    """
    xs, ys = _stack_pairs(pairs)
    if xs.shape[2] != hp.mel_bins:
        raise ValueError(f"dataset has {xs.shape[2]} mel bins, hp says {hp.mel_bins}")
    train_idx, val_idx = split_indices(len(xs), seed)
    if len(train_idx) == 0:
        raise ValueError("dataset too small to split")

    torch.manual_seed(seed)
    model = SpectrogramDenoiser(hp.mel_bins, hp.width, hp.blocks, hp.heads)
    opt = torch.optim.Adam(model.parameters(), lr=hp.lr)
    shuffle_rng = np.random.default_rng(seed + 1)

    def evaluate(idx):
        if len(idx) == 0:
            return float("nan")
        model.eval()
        with torch.no_grad():
            losses = []
            for s in range(0, len(idx), hp.batch_size):
                sel = idx[s : s + hp.batch_size]
                losses.append(elementwise_loss(model(xs[sel]), ys[sel],
                                               hp.loss_norm).item() * len(sel))
        return sum(losses) / len(idx)

    log = []
    for epoch in range(hp.epochs):
        lr = lr_at_epoch(hp.lr, epoch, hp.decay_gamma, hp.decay_every)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = shuffle_rng.permutation(train_idx)
        running = 0.0
        for s in range(0, len(order), hp.batch_size):
            sel = order[s : s + hp.batch_size]
            opt.zero_grad()
            loss = elementwise_loss(model(xs[sel]), ys[sel], hp.loss_norm)
            loss.backward()
            opt.step()
            running += loss.item() * len(sel)
        entry = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": running / len(order),
            "val_loss": evaluate(val_idx),
        }
        log.append(entry)

    if log_path:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, hp, kind="denoiser")
    return model, log


def save_checkpoint(path, model, hp=None, kind="denoiser", extra=None):
    payload = {
        "kind": kind,
        "state": model.state_dict(),
        "hp": asdict(hp) if hp is not None else None,
        "arch": {
            "mel_bins": model.mel_bins,
            "width": model.width,
            "in_channels": model.in_channels,
            "blocks": len(model.blocks),
            "heads": model.blocks[0].attn.num_heads if len(model.blocks) else 4,
        },
        "extra": extra or {},
    }
    if isinstance(model, KeywordClassifier):
        payload["arch"]["classes"] = model.classes
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    arch = payload["arch"]
    if payload["kind"] == "denoiser":
        model = SpectrogramDenoiser(arch["mel_bins"], arch["width"],
                                    arch["blocks"], arch["heads"],
                                    arch["in_channels"])
    elif payload["kind"] == "classifier":
        model = KeywordClassifier(arch["mel_bins"], arch["classes"],
                                  arch["width"], arch["blocks"], arch["heads"],
                                  arch["in_channels"])
    else:
        raise ValueError(f"unknown checkpoint kind {payload['kind']!r}")
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def denoise_array(x: np.ndarray, model: SpectrogramDenoiser) -> np.ndarray:
    """(2, M, T) noisy log-mel -> (1, M, T) denoised, pure inference."""
    if x.ndim != 3:
        raise ValueError(f"expected (C, M, T), got {x.shape}")
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(x.astype(np.float32))[None])
    result = out[0].numpy()
    if not np.all(np.isfinite(result)):
        raise ValueError("non-finite denoiser output")
    return result


def train_digit_classifier(examples, seed: int = 0, classes: int = 10,
                           epochs: int = 20, batch_size: int = 64,
                           lr: float = 3e-3, mel_bins: int = 80,
                           checkpoint_path=None):
    """Train the keyword (digit) classifier: Adam, batch 64, 20 epochs.

    examples: sequence of (X, label) with X shaped (C, M, T). Requires at
    least 10 examples of every class. Returns (model, log).
    """
    by_class = {}
    for _, label in examples:
        by_class[label] = by_class.get(label, 0) + 1
    missing = [c for c in range(classes) if by_class.get(c, 0) < 10]
    if missing:
        raise ValueError(f"need >= 10 examples per class, short on {missing}")

    pairs = [(x, np.zeros((1,) + x.shape[1:], np.float32)) for x, _ in examples]
    xs, _ = _stack_pairs(pairs)
    labels = torch.tensor([int(l) for _, l in examples], dtype=torch.long)

    torch.manual_seed(seed)
    in_channels = xs.shape[1]
    model = KeywordClassifier(mel_bins, classes, in_channels=in_channels)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    ce = torch.nn.CrossEntropyLoss()
    shuffle_rng = np.random.default_rng(seed + 1)

    log = []
    for epoch in range(epochs):
        model.train()
        order = shuffle_rng.permutation(len(xs))
        running, hits = 0.0, 0
        for s in range(0, len(order), batch_size):
            sel = order[s : s + batch_size]
            opt.zero_grad()
            logits = model(xs[sel])
            loss = ce(logits, labels[sel])
            loss.backward()
            opt.step()
            running += loss.item() * len(sel)
            hits += int((logits.argmax(dim=1) == labels[sel]).sum())
        log.append({"epoch": epoch, "train_loss": running / len(xs),
                    "train_acc": hits / len(xs)})
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, None, kind="classifier")
    return model, log


def classify_array(x: np.ndarray, model: KeywordClassifier) -> int:
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(x.astype(np.float32))[None])
    return int(logits.argmax(dim=1).item())
