"""UNet-style dual-head encoder, the frame generator and shallow discriminators.

The encoder downsamples the stacked input frames to the query grid; its last
two convolutions are duplicated per head. The generator decodes the fused
read outputs back to a frame with skip connections from the encoder levels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .memory import Branch, l2_normalize, read_tensor

# learned variants: full model plus the three ablations it is compared with
VARIANTS = ("dream", "mem_disc", "disc", "mem")


@dataclass
class ModelConfig:
    frame_size: int = 64
    channels: int = 3
    frames_in: int = 4
    grid: int = 8  # H = W of the query grid
    query_dim: int = 16  # C
    memory_size: int = 10  # M
    widths: tuple = (16, 32, 32)  # encoder level widths, one per downsampling
    disc_dim: int = 16
    variant: str = "dream"

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        down = math.log2(self.frame_size / self.grid)
        if down != int(down) or down < 1:
            raise ValueError("frame_size / grid must be a power of two >= 2")
        if len(self.widths) != int(down):
            raise ValueError(f"need {int(down)} encoder widths for {self.frame_size}->{self.grid}, got {len(self.widths)}")
        for name in ("frame_size", "channels", "frames_in", "grid", "query_dim", "memory_size", "disc_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    # Ablations carry one branch of twice the width so feature capacity matches.
    @property
    def branches(self) -> tuple[Branch, ...]:
        if self.variant == "dream":
            return (Branch.NORMALITY, Branch.ABNORMALITY)
        return (Branch.NORMALITY,)

    @property
    def head_dim(self) -> int:
        if self.variant == "dream":
            return self.query_dim
        if self.variant == "disc":
            return 4 * self.query_dim
        return 2 * self.query_dim

    @property
    def uses_memory(self) -> bool:
        return self.variant != "disc"

    @property
    def uses_disc(self) -> bool:
        return self.variant != "mem"

    @property
    def fused_dim(self) -> int:
        per = 2 * self.head_dim if self.uses_memory else self.head_dim
        return per * len(self.branches)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def published_model_config(**overrides) -> ModelConfig:
    kw = dict(frame_size=256, grid=32, query_dim=256, memory_size=10, widths=(64, 128, 256), disc_dim=256)
    kw.update(overrides)
    return ModelConfig(**kw)


def _conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=False))


@dataclass
class EncoderOutput:
    queries: dict  # branch -> (B, K_q, C) unit rows
    maps: dict  # branch -> (B, C, H, W) normalized per location
    skips: list = field(default_factory=list)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        cin = cfg.channels * cfg.frames_in
        self.levels = nn.ModuleList()
        for w in cfg.widths:
            self.levels.append(_conv(cin, w))
            cin = w
        self.pool = nn.MaxPool2d(2)
        top = cfg.widths[-1]
        self.heads = nn.ModuleDict(
            {
                b.value: nn.Sequential(_conv(top, top), nn.Conv2d(top, cfg.head_dim, 3, padding=1))
                for b in cfg.branches
            }
        )

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        skips = []
        for level in self.levels:
            x = level(x)
            skips.append(x)
            x = self.pool(x)
        queries, maps = {}, {}
        for name, head in self.heads.items():
            fm = l2_normalize(head(x), dim=1)
            maps[Branch(name)] = fm
            queries[Branch(name)] = fm.flatten(2).transpose(1, 2)
        return EncoderOutput(queries, maps, skips)


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = list(cfg.widths)
        self.inp = _conv(cfg.fused_dim, widths[-1])
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        cin = widths[-1]
        for w in reversed(widths):
            self.ups.append(nn.ConvTranspose2d(cin, w, 2, stride=2))
            self.blocks.append(_conv(2 * w, w))
            cin = w
        self.out = nn.Conv2d(cin, cfg.channels, 1)

    def forward(self, fused: torch.Tensor, skips: list) -> torch.Tensor:
        if fused.shape[1] != self.cfg.fused_dim:
            raise ValueError(f"generator expects {self.cfg.fused_dim} fused channels, got {fused.shape[1]}")
        x = self.inp(fused)
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        return torch.tanh(self.out(x))


class Discriminator(nn.Module):
    """One 3x3 convolution followed by global average pooling."""

    def __init__(self, cin: int, dim: int):
        super().__init__()
        self.cin = cin
        self.conv = nn.Conv2d(cin, dim, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cin:
            raise ValueError(f"discriminator expects (B, {self.cin}, H, W), got {tuple(x.shape)}")
        return self.conv(x).mean(dim=(2, 3))


@dataclass
class ForwardOutput:
    pred: torch.Tensor
    queries: dict
    augmented: dict  # branch -> (B, 2C, H, W)
    features: dict  # branch -> (B, D)
    weights: dict


class DreamNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.generator = Generator(cfg)
        d_in = 2 * cfg.head_dim if cfg.uses_memory else cfg.head_dim
        self.discriminators = nn.ModuleDict(
            {b.value: Discriminator(d_in, cfg.disc_dim) for b in cfg.branches} if cfg.uses_disc else {}
        )

    def check_clip(self, clip: torch.Tensor) -> torch.Tensor:
        """Validate a (B, T, ch, H, W) clip and stack frames along channels."""
        c = self.cfg
        if clip.dim() == 4:
            clip = clip.unsqueeze(0)
        if clip.dim() != 5 or clip.shape[1] != c.frames_in:
            raise ValueError(f"clip must hold {c.frames_in} frames, got shape {tuple(clip.shape)}")
        if tuple(clip.shape[2:]) != (c.channels, c.frame_size, c.frame_size):
            raise ValueError(f"frames must be {c.channels}x{c.frame_size}x{c.frame_size}")
        if clip.abs().max() > 1.0 + 1e-6:
            raise ValueError("pixel values must be normalized to [-1, 1]")
        return clip.flatten(1, 2)

    def encode(self, clip: torch.Tensor) -> EncoderOutput:
        return self.encoder(self.check_clip(clip))

    def read_all(self, enc: EncoderOutput, memory: dict):
        """Read each branch from its bank; returns fused input and per-branch pieces."""
        g = self.cfg.grid
        augmented, weights = {}, {}
        for b in self.cfg.branches:
            q = enc.queries[b]
            if self.cfg.uses_memory:
                aug, w = read_tensor(q, memory[b])
                weights[b] = w
            else:
                aug = q
            augmented[b] = aug.transpose(1, 2).reshape(q.shape[0], -1, g, g)
        fused = torch.cat([augmented[b] for b in self.cfg.branches], dim=1)
        return fused, augmented, weights

    def generate(self, fused: torch.Tensor, skips: list) -> torch.Tensor:
        return self.generator(fused, skips)

    def discriminate(self, augmented: torch.Tensor, branch) -> torch.Tensor:
        return self.discriminators[Branch(branch).value](augmented)

    def forward(self, clip: torch.Tensor, memory: dict) -> ForwardOutput:
        enc = self.encode(clip)
        fused, augmented, weights = self.read_all(enc, memory)
        features = {b: self.discriminate(augmented[b], b) for b in self.cfg.branches} if self.cfg.uses_disc else {}
        pred = self.generate(fused, enc.skips)
        return ForwardOutput(pred, enc.queries, augmented, features, weights)
