"""Per-modality feature extractors.

The EEG branch stacks multi-scale temporal convolutions, a depthwise spatial
stage that collapses the channel axis, and a second multi-scale temporal stage,
pooling down to 32 feature maps of length n_samples / 8. The eye-movement
branch is a single strided convolution over all components. Both emit
[batch x 32 x n_samples/8] so downstream fusion is symmetric.
"""

import torch
import torch.nn as nn

from .errors import ConfigError, ContractError

N_MAPS = 32  # feature maps emitted by both branches
_N_SCALES = 4
_BLOCK1_FILTERS = 8
_DEPTH_MULTIPLIER = 2
_BLOCK3_FILTERS = 8


def _check_input(x, n_channels, n_samples, what):
    if x.ndim != 4:
        raise ContractError(f"{what}: expected 4 axes [batch, 1, channels, samples], got {x.ndim}")
    if x.shape[1] != 1:
        raise ContractError(f"{what}: axis 1 must have size 1, got {x.shape[1]}")
    if x.shape[2] != n_channels:
        raise ContractError(f"{what}: axis 2 must have size {n_channels}, got {x.shape[2]}")
    if x.shape[3] != n_samples:
        raise ContractError(f"{what}: axis 3 must have size {n_samples}, got {x.shape[3]}")


class EegExtractor(nn.Module):
    """Multi-scale temporal/spatial convolutional EEG feature extractor.

    Stage 1 runs four parallel temporal convolutions with kernel widths
    n_samples / 2**t (t = 1..4) at same padding. Stage 2 applies, per scale, a
    depthwise convolution spanning all electrodes followed by a pointwise
    mixing convolution, then concatenates scales and average-pools time by 4.
    Stage 3 is a second four-scale temporal stage on the pooled maps
    (kernels n_samples / (2**t * 4)), concatenated and pooled by 2.
    """

    def __init__(self, n_channels=64, n_samples=128, dropout=0.2):
        super().__init__()
        if n_samples % 8 != 0:
            raise ConfigError(f"n_samples must be divisible by 8, got {n_samples}")
        k1 = [n_samples // 2**t for t in range(1, _N_SCALES + 1)]
        k3 = [n_samples // (2**t * 4) for t in range(1, _N_SCALES + 1)]
        if min(k3) < 1:
            raise ConfigError(f"n_samples {n_samples} too short for the multi-scale kernels")
        self.n_channels = n_channels
        self.n_samples = n_samples
        self.out_len = n_samples // 8

        self.temporal = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(1, _BLOCK1_FILTERS, (1, k), padding="same"),
                nn.BatchNorm2d(_BLOCK1_FILTERS),
                nn.ELU(),
                nn.Dropout(dropout),
            )
            for k in k1
        )
        spatial_out = _BLOCK1_FILTERS * _DEPTH_MULTIPLIER
        self.spatial = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(_BLOCK1_FILTERS, spatial_out, (n_channels, 1), groups=_BLOCK1_FILTERS),
                nn.Conv2d(spatial_out, spatial_out, (1, 1)),
                nn.BatchNorm2d(spatial_out),
                nn.ELU(),
                nn.Dropout(dropout),
            )
            for _ in k1
        )
        self.pool1 = nn.AvgPool2d((1, 4))
        merged = spatial_out * _N_SCALES  # 64 maps after concatenation
        self.temporal2 = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(merged, _BLOCK3_FILTERS, (1, k), padding="same"),
                nn.BatchNorm2d(_BLOCK3_FILTERS),
                nn.ELU(),
                nn.Dropout(dropout),
            )
            for k in k3
        )
        self.pool2 = nn.AvgPool2d((1, 2))

    def forward(self, x):
        _check_input(x, self.n_channels, self.n_samples, "eeg input")
        scales = [branch(x) for branch in self.temporal]  # each [B, 8, C, T]
        scales = [blk(z) for blk, z in zip(self.spatial, scales)]  # each [B, 16, 1, T]
        z = torch.cat(scales, dim=1)
        z = self.pool1(z)  # [B, 64, 1, T/4]
        z = torch.cat([branch(z) for branch in self.temporal2], dim=1)  # [B, 32, 1, T/4]
        z = self.pool2(z)  # [B, 32, 1, T/8]
        return z.squeeze(2)


class EmExtractor(nn.Module):
    """Single-stage eye-movement extractor.

    One convolution spans all components with kernel width 8 and temporal
    stride 8, so the 128-sample window maps to 16 non-overlapping steps.
    """

    KERNEL = 8

    def __init__(self, n_components=6, n_samples=128, dropout=0.2):
        super().__init__()
        if n_samples % self.KERNEL != 0:
            raise ConfigError(f"n_samples must be divisible by {self.KERNEL}, got {n_samples}")
        self.n_components = n_components
        self.n_samples = n_samples
        self.out_len = n_samples // self.KERNEL
        self.conv = nn.Conv2d(1, N_MAPS, (n_components, self.KERNEL), stride=(1, self.KERNEL))
        self.act = nn.LeakyReLU(0.01)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        _check_input(x, self.n_components, self.n_samples, "em input")
        z = self.conv(x)  # [B, 32, 1, T/8]
        z = self.drop(self.act(z))
        return z.squeeze(2)
