"""Cross-attention fusion of the two branches' feature maps.

Queries come from the class-specific map; keys and values are computed
separately for each branch and concatenated along the token axis, so every
temporal position attends over 2L' tokens.  The class-agnostic input is
detached: no gradient flows back into that branch.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, DomainError

SCALE_MODES = ("paper_literal_d_over_h", "sqrt_d_over_h")


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int = 4
    scale_mode: str = "paper_literal_d_over_h"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.scale_mode not in SCALE_MODES:
            raise ConfigError(f"scale_mode must be one of {SCALE_MODES}")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @property
    def scale(self):
        d_over_h = self.d_model / self.n_heads
        return d_over_h if self.scale_mode == "paper_literal_d_over_h" else d_over_h**0.5

    def to_dict(self):
        return {"d_model": self.d_model, "n_heads": self.n_heads, "scale_mode": self.scale_mode}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class MultiSemanticCrossAttention(nn.Module):
    """Fuse (B, C, L') class-specific and class-agnostic maps into (B, C, L').

    Channel-axis LayerNorm per temporal position; no positional encodings,
    so the output is token-wise equivariant to permutations of time.
    ``use_layernorm=False`` is a test hook that bypasses both norms.
    """

    def __init__(self, cfg, use_layernorm=True):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.use_layernorm = use_layernorm
        self.norm_cs = nn.LayerNorm(d)
        self.norm_ca = nn.LayerNorm(d)
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k_cs = nn.Linear(d, d, bias=False)
        self.w_v_cs = nn.Linear(d, d, bias=False)
        self.w_k_ca = nn.Linear(d, d, bias=False)
        self.w_v_ca = nn.Linear(d, d, bias=False)

    def _heads(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.cfg.n_heads, self.cfg.head_dim).transpose(1, 2)  # (B, h, T, d_h)

    def forward(self, f_cs, f_ca, include_ca=True, return_weights=False):
        if f_cs.shape != f_ca.shape:
            raise DomainError(f"feature maps must share a shape: {tuple(f_cs.shape)} vs {tuple(f_ca.shape)}")
        if f_cs.shape[1] != self.cfg.d_model:
            raise DomainError(f"expected {self.cfg.d_model} channels, got {f_cs.shape[1]}")

        z_cs = f_cs.transpose(1, 2)  # (B, L', C): tokens are temporal positions
        z_ca = f_ca.detach().transpose(1, 2)
        if self.use_layernorm:
            z_cs = self.norm_cs(z_cs)
            z_ca = self.norm_ca(z_ca)

        q = self._heads(self.w_q(z_cs))
        k = self._heads(self.w_k_cs(z_cs))
        v = self._heads(self.w_v_cs(z_cs))
        if include_ca:
            k = torch.cat([k, self._heads(self.w_k_ca(z_ca))], dim=2)
            v = torch.cat([v, self._heads(self.w_v_ca(z_ca))], dim=2)

        scores = q @ k.transpose(-1, -2) / self.cfg.scale
        weights = torch.softmax(scores, dim=-1)  # (B, h, L', T_kv)
        out = weights @ v  # (B, h, L', d_h)
        b, _, t, _ = out.shape
        z_m = out.transpose(1, 2).reshape(b, t, self.cfg.d_model).transpose(1, 2)
        if return_weights:
            return z_m, weights
        return z_m

    def set_identity_projections(self):
        """All five projections become the identity (test hook)."""
        with torch.no_grad():
            eye = torch.eye(self.cfg.d_model)
            for lin in (self.w_q, self.w_k_cs, self.w_v_cs, self.w_k_ca, self.w_v_ca):
                lin.weight.copy_(eye)
