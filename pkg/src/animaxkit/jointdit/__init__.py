"""Toy multi-view video-pose denoiser: token layout, shared rotary position
encodings, modality embeddings, camera-ray conditioning, multi-view
attention, rectified-flow training and guided sampling."""

from .tokens import (
    LatentDims,
    MultiViewGrid,
    RopeTable,
    TokenGrid,
    build_token_sequence,
    inflate_views,
    deflate_views,
    shared_rope,
)
from .model import (
    DenoiserConfig,
    JointDenoiser,
    ModalityEmbedding,
    SelfAttention,
    denoise_step,
    modality_bias,
    multiview_attention,
)
from .diffusion import TrainConfig, sample, train_toy, write_loss_csv
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "LatentDims",
    "MultiViewGrid",
    "RopeTable",
    "TokenGrid",
    "build_token_sequence",
    "inflate_views",
    "deflate_views",
    "shared_rope",
    "DenoiserConfig",
    "JointDenoiser",
    "ModalityEmbedding",
    "SelfAttention",
    "denoise_step",
    "modality_bias",
    "multiview_attention",
    "TrainConfig",
    "sample",
    "train_toy",
    "write_loss_csv",
    "load_checkpoint",
    "save_checkpoint",
]
