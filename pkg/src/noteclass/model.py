"""Multi-branch densely connected convolutional classifier.

Four downsampling stages, each running parallel dense blocks with horizontal,
square and vertical kernels; branch outputs are concatenated and batch
normalized per stage so later branches see feature maps from every kernel
shape.  Two fully connected layers produce softmax scores over the classes.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .notes import DataError

MULTI_KERNELS = ((1, 9), (3, 3), (9, 1))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; presets cover the ablation variants."""

    input_bins: int = 256
    input_frames: int = 43
    in_channels: int = 2
    classes: int = 7
    stages: int = 4
    branches: tuple = MULTI_KERNELS
    growth_rate: int = 25
    dense_layers: int = 4
    pool: tuple = (2, 2)
    fc_hidden: int = 32
    negative_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.99  # decay of the running statistics

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(k) for k in self.branches))
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.stages < 1:
            raise DataError("network needs at least one stage")
        if not self.branches:
            raise DataError("network needs at least one branch")
        if self.growth_rate < 1 or self.dense_layers < 1:
            raise DataError("growth rate and layer count must be >= 1")
        if self.classes < 2:
            raise DataError("need at least two classes")
        for kh, kw in self.branches:
            if kh % 2 == 0 or kw % 2 == 0:
                raise DataError(f"kernel dims must be odd for same-size padding, got {(kh, kw)}")

    @property
    def stage_channels(self) -> int:
        return len(self.branches) * self.growth_rate

    def spatial_ladder(self) -> list:
        """Per-stage output (F, T) under ceil-mode (2x2) pooling."""
        f, t = self.input_bins, self.input_frames
        dims = []
        for _ in range(self.stages):
            f = -(-f // self.pool[0])
            t = -(-t // self.pool[1])
            dims.append((f, t))
        return dims

    @property
    def flat_features(self) -> int:
        f, t = self.spatial_ladder()[-1]
        return f * t * self.stage_channels

    @classmethod
    def single_square_k57(cls, **kw) -> "ModelConfig":
        """Single-branch (3x3) ablation with the growth rate raised to 57."""
        return cls(branches=((3, 3),), growth_rate=57, **kw)

    @classmethod
    def triple_square(cls, **kw) -> "ModelConfig":
        """Three parallel branches all using (3x3) kernels."""
        return cls(branches=((3, 3), (3, 3), (3, 3)), **kw)


class DenseBlock(nn.Module):
    """L same-padding conv layers; layer i consumes the block input plus all
    previous layers' outputs and emits growth_rate channels.  The block output
    is the last layer's feature maps."""

    def __init__(self, in_channels: int, growth_rate: int, n_layers: int,
                 kernel, negative_slope: float):
        super().__init__()
        kh, kw = kernel
        pad = (kh // 2, kw // 2)
        self.negative_slope = negative_slope
        self.convs = nn.ModuleList(
            nn.Conv2d(in_channels + i * growth_rate, growth_rate, (kh, kw), padding=pad)
            for i in range(n_layers)
        )

    def forward(self, x):
        feats = [x]
        out = x
        for conv in self.convs:
            out = F.leaky_relu(conv(torch.cat(feats, dim=1)), self.negative_slope)
            feats.append(out)
        return out


class MultiBranchStage(nn.Module):
    """Parallel dense blocks (one kernel shape each), pooled then concatenated
    on channels and batch normalized."""

    def __init__(self, in_channels: int, cfg: ModelConfig):
        super().__init__()
        self.pool = cfg.pool
        self.branches = nn.ModuleList(
            DenseBlock(in_channels, cfg.growth_rate, cfg.dense_layers, k, cfg.negative_slope)
            for k in cfg.branches
        )
        self.bn = nn.BatchNorm2d(cfg.stage_channels, eps=cfg.bn_eps,
                                 momentum=1.0 - cfg.bn_momentum)

    def _pool(self, x):
        # ceil output sizing via zero padding so odd spatial dims survive halving
        ph, pw = self.pool
        pad_h = (-x.shape[-2]) % ph
        pad_w = (-x.shape[-1]) % pw
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h))
        return F.max_pool2d(x, self.pool)

    def forward(self, x):
        outs = [self._pool(branch(x)) for branch in self.branches]
        return self.bn(torch.cat(outs, dim=1))


class NoteClassifier(nn.Module):
    """The full classifier; forward() returns logits over the classes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        stages = [MultiBranchStage(cfg.in_channels, cfg)]
        stages += [MultiBranchStage(cfg.stage_channels, cfg) for _ in range(cfg.stages - 1)]
        self.stages = nn.ModuleList(stages)
        self.fc1 = nn.Linear(cfg.flat_features, cfg.fc_hidden)
        self.fc2 = nn.Linear(cfg.fc_hidden, cfg.classes)
        self.apply(self._init_weights)

    def _init_weights(self, module):
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(module.weight, a=self.cfg.negative_slope,
                                    mode="fan_in", nonlinearity="leaky_relu")
            nn.init.zeros_(module.bias)

    def forward(self, x):
        self._check_input(x)
        for stage in self.stages:
            x = stage(x)
        x = torch.flatten(x, 1)
        x = F.leaky_relu(self.fc1(x), self.cfg.negative_slope)
        return self.fc2(x)

    def stage_maps(self, x) -> list:
        """Per-stage feature maps, for shape inspection."""
        self._check_input(x)
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def predict_proba(self, x) -> torch.Tensor:
        """Class probabilities (rows on the simplex); call under eval()/no_grad."""
        return torch.softmax(self.forward(x), dim=1)

    def _check_input(self, x):
        expected = (self.cfg.in_channels, self.cfg.input_bins, self.cfg.input_frames)
        if tuple(x.shape[1:]) != expected:
            raise DataError(f"input shape {tuple(x.shape[1:])} does not match model {expected}")


def count_params(model: nn.Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def analytic_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; must agree with count_params exactly."""
    total = 0
    in_ch = cfg.in_channels
    for _ in range(cfg.stages):
        for kh, kw in cfg.branches:
            area = kh * kw
            for i in range(cfg.dense_layers):
                c_in = in_ch + i * cfg.growth_rate
                total += c_in * cfg.growth_rate * area + cfg.growth_rate
        total += 2 * cfg.stage_channels  # batch-norm scale + shift
        in_ch = cfg.stage_channels
    total += cfg.flat_features * cfg.fc_hidden + cfg.fc_hidden
    total += cfg.fc_hidden * cfg.classes + cfg.classes
    return total


def predict_class(probs) -> int:
    """Argmax class id with lowest-index tie-break; rejects NaN scores."""
    arr = np.asarray(probs, dtype=np.float64)
    if np.isnan(arr).any():
        raise DataError("probability vector contains NaN")
    return int(np.argmax(arr))


def save_checkpoint(model: NoteClassifier, path, extra: Optional[dict] = None) -> None:
    """Self-describing checkpoint: config header plus named parameter arrays."""
    payload = {
        "format": "noteclass-checkpoint-v1",
        "config": asdict(model.cfg),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_cfg: Optional[ModelConfig] = None):
    """Load a checkpoint; fails loudly when the stored config does not match.

    Returns (model, config, extra).
    """
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != "noteclass-checkpoint-v1":
        raise DataError(f"{path} is not a noteclass checkpoint")
    raw = dict(payload["config"])
    raw["branches"] = tuple(tuple(k) for k in raw["branches"])
    raw["pool"] = tuple(raw["pool"])
    cfg = ModelConfig(**raw)
    if expected_cfg is not None and cfg != expected_cfg:
        raise DataError(
            "checkpoint config mismatch:\n"
            f"  checkpoint: {cfg}\n  expected:   {expected_cfg}"
        )
    model = NoteClassifier(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, cfg, payload.get("extra", {})
