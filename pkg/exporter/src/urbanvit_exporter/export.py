"""Export operations: pretrained-CNN features, CAE training, CAE encoding."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np
import torch

from . import data, models

log = logging.getLogger(__name__)


@dataclass
class ExporterConfig:
    mode: str  # "pretrained-cnn" | "cae"
    imagelet_dir: str
    out_path: str
    learning_rate: float = 0.001
    epochs: int = 500
    batch_size: int = 128
    embedding_dim: int = 512
    seed: int = 0
    vgg_weights: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("pretrained-cnn", "cae"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if min(self.learning_rate, self.epochs, self.batch_size, self.embedding_dim) <= 0:
            raise ValueError("training settings must be positive")


def _write_report(cfg: ExporterConfig, skipped: list[dict], extra: dict | None = None) -> None:
    payload = {"skipped": skipped, **(extra or {})}
    with open(cfg.out_path + ".report.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _pixels_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(0, 3, 1, 2)


def export_pretrained(cfg: ExporterConfig) -> str:
    """4096-dim penultimate-FC features per imagelet, written in the shared
    embedding CSV format. Returns the output path."""
    ids, pixels, skipped = data.load_imagelets(cfg.imagelet_dir)
    net, pretrained = models.build_vgg16(cfg.seed, cfg.vgg_weights)
    x = _pixels_to_tensor(pixels)
    with torch.no_grad():
        Z = models.vgg_features(net, x).numpy()
    if not np.isfinite(Z).all():
        raise RuntimeError("non-finite values in pretrained features")
    data.write_embedding_csv(ids, Z, cfg.out_path)
    _write_report(cfg, skipped, {"mode": "pretrained-cnn", "pretrained_weights": pretrained,
                                 "dim": int(Z.shape[1]), "rows": len(ids)})
    log.info("pretrained export: %d rows x %d dims (pretrained=%s)", len(ids), Z.shape[1], pretrained)
    return cfg.out_path


def train_cae(cfg: ExporterConfig, weights_out: str, loss_curve_out: str | None = None) -> str:
    """Trains the autoencoder with Adam and writes encoder+decoder weights
    plus a per-epoch loss-curve CSV. Returns the weights path."""
    ids, pixels, skipped = data.load_imagelets(cfg.imagelet_dir)
    if len(ids) < cfg.batch_size:
        raise ValueError(
            f"need at least batch_size={cfg.batch_size} imagelets, got {len(ids)}"
        )
    torch.manual_seed(cfg.seed)
    x = _pixels_to_tensor(pixels)
    net = models.Cae(cfg.embedding_dim)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)

    curve: list[float] = []
    net.train()
    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(x), generator=gen)
        total = 0.0
        n_batches = 0
        for i in range(0, len(x), cfg.batch_size):
            batch = x[perm[i : i + cfg.batch_size]]
            opt.zero_grad()
            recon = net(batch)
            loss = models.reconstruction_loss(batch, recon)
            loss.backward()
            opt.step()
            total += float(loss.item())
            n_batches += 1
        curve.append(total / n_batches)
        if (epoch + 1) % max(1, cfg.epochs // 10) == 0:
            log.info("cae epoch %d/%d: loss %.5f", epoch + 1, cfg.epochs, curve[-1])

    torch.save(net.state_dict(), weights_out)
    if loss_curve_out is None:
        loss_curve_out = weights_out + ".loss.csv"
    with open(loss_curve_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(curve, start=1):
            w.writerow([e, format(v, ".8g")])
    _write_report(cfg, skipped, {"mode": "cae-train", "epochs": cfg.epochs,
                                 "final_loss": curve[-1]})
    return weights_out


def export_cae(cfg: ExporterConfig, weights_path: str) -> str:
    """512-dim encoder outputs per imagelet in the shared format."""
    ids, pixels, skipped = data.load_imagelets(cfg.imagelet_dir)
    net = models.Cae(cfg.embedding_dim)
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    except (RuntimeError, FileNotFoundError) as exc:
        raise ValueError(f"cannot load CAE weights from {weights_path}: {exc}") from exc
    net.eval()
    x = _pixels_to_tensor(pixels)
    outs = []
    with torch.no_grad():
        for i in range(0, len(x), cfg.batch_size):
            outs.append(net.encode(x[i : i + cfg.batch_size]))
    Z = torch.cat(outs).numpy()
    if not np.isfinite(Z).all():
        raise RuntimeError("non-finite values in CAE embeddings")
    data.write_embedding_csv(ids, Z, cfg.out_path)
    _write_report(cfg, skipped, {"mode": "cae", "dim": int(Z.shape[1]), "rows": len(ids)})
    log.info("cae export: %d rows x %d dims", len(ids), Z.shape[1])
    return cfg.out_path


def reconstruction_mse(weights_path: str, pixels: np.ndarray, embedding_dim: int = 512) -> float:
    """Mean reconstruction MSE of the given imagelets under saved weights
    (used by sanity checks comparing training images against noise)."""
    net = models.Cae(embedding_dim)
    net.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
    net.eval()
    x = _pixels_to_tensor(pixels)
    with torch.no_grad():
        recon = net(x)
        return float(models.reconstruction_loss(x, recon).item())
