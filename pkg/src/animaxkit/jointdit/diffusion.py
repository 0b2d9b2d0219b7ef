"""Rectified-flow training and guided Euler sampling for the toy denoiser.

Noisy tokens follow the straight-line schedule ``x_t = (1 - t) * x0 + t * eps``
with velocity target ``v = eps - x0``; the loss covers noisy slots only, and
condition slots stay clean (zeroed with probability ``cond_drop_prob`` to
support classifier-free guidance on the image condition).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ValidationError
from .model import DenoiserConfig, JointDenoiser
from .tokens import LatentDims


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-3
    lr_min: float = 1e-4  # cosine-decayed floor
    seed: int = 0


@dataclass(frozen=True)
class TrainSample:
    """One clean training example: full token-layout latents plus condition."""

    latents: np.ndarray  # (N, T, h, w, c), clean values in token layout
    label: int
    rays: np.ndarray  # (N, h, w, 6)


def _slot_masks(dims: LatentDims) -> tuple[torch.Tensor, torch.Tensor]:
    noisy = torch.zeros(dims.temporal, dtype=torch.bool)
    noisy[dims.noisy_rgb_slots] = True
    noisy[dims.noisy_pose_slots] = True
    cond = torch.from_numpy(dims.condition_mask())
    return noisy, cond


def make_training_batch(
    clean: torch.Tensor,  # (B, N, T, h, w, c)
    t: torch.Tensor,  # (B,)
    noise: torch.Tensor,
    drop: torch.Tensor,  # (B,) bool, True zeroes the condition slots
    dims: LatentDims,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns (model input, velocity target, noisy-slot mask)."""
    noisy_mask, cond_mask = _slot_masks(dims)
    tb = t[:, None, None, None, None, None]
    x = clean.clone()
    mixed = (1.0 - tb) * clean + tb * noise
    x[:, :, noisy_mask] = mixed[:, :, noisy_mask]
    x[:, :, cond_mask] = torch.where(
        drop[:, None, None, None, None, None],
        torch.zeros_like(x[:, :, cond_mask]),
        x[:, :, cond_mask],
    )
    target = noise - clean
    return x, target, noisy_mask


def velocity_loss(pred: torch.Tensor, target: torch.Tensor, noisy_mask: torch.Tensor) -> torch.Tensor:
    """MSE restricted to the noisy slots; condition-slot targets never enter."""
    return torch.mean((pred[:, :, noisy_mask] - target[:, :, noisy_mask]) ** 2)


def train_toy(
    samples: list[TrainSample],
    config: DenoiserConfig,
    dims: LatentDims,
    train: TrainConfig | None = None,
) -> tuple[JointDenoiser, list[float]]:
    """Overfit the denoiser on a small latent dataset; returns the model and
    the per-step loss curve."""
    if not samples:
        raise ValidationError("training requires at least one sample")
    train = train or TrainConfig()
    gen = torch.Generator().manual_seed(train.seed)
    torch.manual_seed(train.seed)
    model = JointDenoiser(config, dims)
    opt = torch.optim.Adam(model.parameters(), lr=train.lr)

    latents = torch.stack([torch.from_numpy(s.latents).float() for s in samples])
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    rays = torch.from_numpy(samples[0].rays).float()
    for s in samples:
        if not np.array_equal(s.rays, samples[0].rays):
            raise ValidationError("all training samples must share one camera rig")

    losses: list[float] = []
    for step in range(train.steps):
        frac = step / max(train.steps - 1, 1)
        lr = train.lr_min + 0.5 * (train.lr - train.lr_min) * (1.0 + np.cos(np.pi * frac))
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.randint(0, len(samples), (train.batch_size,), generator=gen)
        clean = latents[idx]
        t = torch.rand(train.batch_size, generator=gen)
        noise = torch.randn(clean.shape, generator=gen)
        drop = torch.rand(train.batch_size, generator=gen) < config.cond_drop_prob
        x, target, noisy_mask = make_training_batch(clean, t, noise, drop, dims)
        pred = model(x, t, labels[idx], rays)
        loss = velocity_loss(pred, target, noisy_mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    return model, losses


def sample(
    model: JointDenoiser,
    cond_rgb: np.ndarray,  # (N, 1, h, w, c)
    cond_pose: np.ndarray,  # (N, 1, h, w, c)
    rays: np.ndarray,  # (N, h, w, 6)
    label: int,
    config: DenoiserConfig | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic Euler integration from noise at t=1 down to t=0 with
    classifier-free guidance on the image condition.

    Returns (rgb_latents, pose_latents), each (N, 1+f, h, w, c).
    """
    config = config or model.config
    dims = model.dims
    dtype = next(model.parameters()).dtype
    gen = torch.Generator().manual_seed(seed)
    n, t_total = dims.n_views, dims.temporal
    noisy_mask, cond_mask = _slot_masks(dims)

    state = torch.zeros((n, t_total, dims.h, dims.w, dims.c), dtype=dtype)
    state[:, noisy_mask] = torch.randn(
        (n, int(noisy_mask.sum()), dims.h, dims.w, dims.c), generator=gen
    ).to(dtype)
    cond_vals = torch.zeros_like(state)
    cond_vals[:, dims.cond_rgb_slot] = torch.from_numpy(cond_rgb[:, 0]).to(dtype)
    cond_vals[:, dims.cond_pose_slot] = torch.from_numpy(cond_pose[:, 0]).to(dtype)
    rays_t = torch.from_numpy(rays).to(dtype)

    steps = config.sample_steps
    ts = torch.linspace(1.0, 0.0, steps + 1, dtype=dtype)
    labels = torch.tensor([label, label], dtype=torch.long)
    with torch.no_grad():
        for i in range(steps):
            t = ts[i]
            dt = float(ts[i] - ts[i + 1])
            x_cond = state.clone()
            x_cond[:, cond_mask] = cond_vals[:, cond_mask]
            x_uncond = state.clone()  # condition slots stay zero
            batch = torch.stack([x_cond, x_uncond])
            v = model(batch, torch.stack([t, t]), labels, rays_t)
            v_cond, v_uncond = v[0], v[1]
            guided = v_uncond + config.guidance_scale * (v_cond - v_uncond)
            state[:, noisy_mask] = state[:, noisy_mask] - dt * guided[:, noisy_mask]

    out = state.numpy()
    rgb = out[:, dims.noisy_rgb_slots]
    pose = out[:, dims.noisy_pose_slots]
    return rgb, pose


def write_loss_csv(losses: list[float], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, f"{loss:.8e}"])
