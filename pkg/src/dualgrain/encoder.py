"""1D residual encoder with multi-order dilated depthwise aggregation blocks.

Both branches share this backbone; the aggregation module is inserted after
the second conv of each residual block in the configured stages.  The forward
pass returns the pre-pooling feature map and the globally average-pooled,
L2-normalized embedding.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

CHECKPOINT_VERSION = 1


def default_channel_split(channels):
    """Low branch gets ~half the channels, mid a quarter, high the remainder."""
    c_l = -(-channels // 2)  # ceil
    c_m = channels // 4
    c_h = channels - c_l - c_m
    if min(c_l, c_m, c_h) < 1:
        raise ConfigError(f"channel count {channels} too small to split three ways")
    return (c_l, c_m, c_h)


@dataclass(frozen=True)
class MoiaConfig:
    channels: int
    channel_split: tuple = None  # (C_l, C_m, C_h); default_channel_split if None
    kernel_sizes: tuple = (5, 5, 7)
    dilations: tuple = (1, 2, 3)
    padding_mode: str = "zeros"  # "circular" makes the block shift-equivariant

    def resolved_split(self):
        split = self.channel_split if self.channel_split is not None else default_channel_split(self.channels)
        if sum(split) != self.channels:
            raise ConfigError(f"channel_split {split} does not sum to {self.channels}")
        if self.dilations != (1, 2, 3):
            raise ConfigError(f"dilations must be (1, 2, 3), got {self.dilations}")
        return split


class Moia(nn.Module):
    """Parallel dilated depthwise convs over channel groups, fused pointwise.

    Shape-preserving: input (B, C, L) -> output (B, C, L).
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.split = cfg.resolved_split()
        c = cfg.channels
        k_in, k_mid, k_high = cfg.kernel_sizes
        _, d_mid, d_high = cfg.dilations
        pad = dict(padding_mode=cfg.padding_mode)
        self.dw_in = nn.Conv1d(c, c, k_in, padding=(k_in - 1) // 2, groups=c, **pad)
        c_l, c_m, c_h = self.split
        self.dw_mid = nn.Conv1d(c_m, c_m, k_mid, padding=d_mid * (k_mid - 1) // 2, dilation=d_mid, groups=c_m, **pad)
        self.dw_high = nn.Conv1d(c_h, c_h, k_high, padding=d_high * (k_high - 1) // 2, dilation=d_high, groups=c_h, **pad)
        self.pw = nn.Conv1d(c, c, 1)

    def forward(self, x):
        if x.shape[1] != self.cfg.channels:
            raise ConfigError(f"expected {self.cfg.channels} channels, got {x.shape[1]}")
        x = self.dw_in(x)
        c_l, c_m, c_h = self.split
        x_low, x_mid, x_high = torch.split(x, [c_l, c_m, c_h], dim=1)
        x_mid = self.dw_mid(x_mid)
        x_high = self.dw_high(x_high)
        return self.pw(torch.cat([x_low, x_mid, x_high], dim=1))

    def set_identity(self):
        """Center-tap depthwise kernels and identity pointwise; output == input."""
        with torch.no_grad():
            for conv in (self.dw_in, self.dw_mid, self.dw_high):
                conv.weight.zero_()
                conv.weight[:, 0, conv.kernel_size[0] // 2] = 1.0
                conv.bias.zero_()
            self.pw.weight.copy_(torch.eye(self.cfg.channels).unsqueeze(-1))
            self.pw.bias.zero_()


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 52
    widths: tuple = (64, 128, 256, 512)
    blocks: tuple = (2, 2, 2, 2)
    moia_stages: tuple = None  # default: last two stages
    moia_channel_split: tuple = None
    stem_kernel: int = 7

    def __post_init__(self):
        if len(self.widths) != len(self.blocks):
            raise ConfigError("widths and blocks must have equal length")
        if self.moia_stages is not None and len(self.moia_stages) != len(self.widths):
            raise ConfigError("moia_stages must name one flag per stage")

    @property
    def embedding_dim(self):
        return self.widths[-1]

    def resolved_moia_stages(self):
        if self.moia_stages is not None:
            return tuple(bool(v) for v in self.moia_stages)
        n = len(self.widths)
        return tuple(i >= n - 2 for i in range(n))

    def tiny(self):
        return EncoderConfig(
            in_channels=self.in_channels,
            widths=tuple(max(4, w // 8) for w in self.widths),
            blocks=self.blocks,
            moia_stages=self.moia_stages,
            moia_channel_split=self.moia_channel_split,
            stem_kernel=self.stem_kernel,
        )

    def to_dict(self):
        d = {
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "blocks": list(self.blocks),
            "moia_stages": list(self.moia_stages) if self.moia_stages is not None else None,
            "moia_channel_split": list(self.moia_channel_split) if self.moia_channel_split is not None else None,
            "stem_kernel": self.stem_kernel,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            in_channels=d["in_channels"],
            widths=tuple(d["widths"]),
            blocks=tuple(d["blocks"]),
            moia_stages=tuple(d["moia_stages"]) if d.get("moia_stages") is not None else None,
            moia_channel_split=tuple(d["moia_channel_split"]) if d.get("moia_channel_split") is not None else None,
            stem_kernel=d.get("stem_kernel", 7),
        )


class BasicBlock(nn.Module):
    def __init__(self, in_channels, out_channels, stride=1, with_moia=False, moia_split=None):
        super().__init__()
        self.conv1 = nn.Conv1d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm1d(out_channels)
        self.conv2 = nn.Conv1d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm1d(out_channels)
        self.moia = Moia(MoiaConfig(channels=out_channels, channel_split=moia_split)) if with_moia else None
        if stride != 1 or in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv1d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm1d(out_channels),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.moia is not None:
            out = self.moia(out)
        return F.relu(out + identity)


class ResNet1d(nn.Module):
    """Residual 1D encoder; forward returns (feature_map, normalized embedding)."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        w0 = config.widths[0]
        k = config.stem_kernel
        self.stem = nn.Sequential(
            nn.Conv1d(config.in_channels, w0, k, stride=2, padding=k // 2, bias=False),
            nn.BatchNorm1d(w0),
            nn.ReLU(inplace=True),
            nn.MaxPool1d(3, stride=2, padding=1),
        )
        moia_stages = config.resolved_moia_stages()
        stages = []
        in_ch = w0
        for stage_idx, (width, n_blocks) in enumerate(zip(config.widths, config.blocks)):
            blocks = []
            for block_idx in range(n_blocks):
                stride = 2 if (stage_idx > 0 and block_idx == 0) else 1
                blocks.append(
                    BasicBlock(
                        in_ch,
                        width,
                        stride=stride,
                        with_moia=moia_stages[stage_idx],
                        moia_split=config.moia_channel_split,
                    )
                )
                in_ch = width
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)

    @property
    def embedding_dim(self):
        return self.config.embedding_dim

    def forward(self, x):
        if x.shape[1] != self.config.in_channels:
            raise ConfigError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        fmap = self.stages(self.stem(x))
        emb = F.normalize(fmap.mean(dim=2), dim=1, eps=1e-12)
        return fmap, emb

    def embed(self, x):
        return self.forward(x)[1]


def count_parameters(module, trainable_only=False):
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def save_checkpoint(module, path, config=None, extra=None):
    """Versioned container: config JSON + named flat parameter/buffer arrays."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict() if config is not None else None,
        "extra": extra or {},
    }
    arrays = {f"param::{name}": t.detach().cpu().numpy() for name, t in module.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (meta dict, {state-dict name: numpy array})."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta['version']}")
        arrays = {k[len("param::") :]: data[k] for k in data.files if k.startswith("param::")}
    return meta, arrays


def load_encoder(path):
    meta, arrays = load_checkpoint(path)
    if meta["config"] is None:
        raise ConfigError("checkpoint has no encoder config")
    model = ResNet1d(EncoderConfig.from_dict(meta["config"]))
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(state)
    return model, meta
