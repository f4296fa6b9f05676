"""Video completion network (VCNet): a wavelet sparse transformer.

Each block projects features to Q/K/V, splits them into Haar subbands,
computes attention on the low-frequency tokens only and applies the same
attention to the low band and all three high bands before resynthesis.
Keys inside corrupted regions are excluded so holes are filled from valid
context only.
"""
from dataclasses import dataclass
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError
from .wavelet import dwt2d_nchw, idwt2d_nchw

ATTENTION_MODES = ("both", "dsa", "ssa")


@dataclass(frozen=True)
class VCNetConfig:
    base_channels: int = 8
    blocks: int = 2
    heads: int = 2
    max_frames: int = 8
    bias_extent: int = 16
    attention: str = "both"

    def __post_init__(self):
        if self.base_channels < 1 or self.blocks < 1 or self.heads < 1:
            raise ConfigError("base_channels, blocks and heads must be positive")
        if self.width % self.heads:
            raise ConfigError(f"heads={self.heads} must divide width {self.width}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}")
        if self.max_frames < 1 or self.bias_extent < 1:
            raise ConfigError("max_frames and bias_extent must be positive")

    @property
    def width(self) -> int:
        return 4 * self.base_channels


def _masked_softmax(logits: torch.Tensor, valid_keys: torch.Tensor) -> torch.Tensor:
    valid = valid_keys.to(torch.bool)
    row_ok = valid.any(dim=-1, keepdim=True)
    logits = logits.masked_fill(~valid, float("-inf"))
    logits = torch.where(row_ok, logits, torch.zeros_like(logits))
    attn = torch.softmax(logits, dim=-1)
    # rows without any valid key come back all-zero; callers treat that as degenerate
    return torch.where(row_ok & valid, attn, torch.zeros_like(attn))


def _similarity(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    return q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])


def dsa(q: torch.Tensor, k: torch.Tensor, bias, valid_keys: torch.Tensor) -> torch.Tensor:
    """Dense attention ``softmax(QK^T/sqrt(d) + B)`` restricted to valid keys.

    ``valid_keys`` broadcasts against the ``(..., L, L)`` logits; a 1-D
    vector selects key columns. Rows with no valid key are returned as zeros.
    """
    return _masked_softmax(_similarity(q, k) + bias, valid_keys)


def ssa(q: torch.Tensor, k: torch.Tensor, bias, valid_keys: torch.Tensor) -> torch.Tensor:
    """Sparse attention: negative similarities are clipped to zero before the softmax."""
    return _masked_softmax(F.relu(_similarity(q, k)) + bias, valid_keys)


def fuse_attention(a_dsa: torch.Tensor, a_ssa: torch.Tensor, omega) -> torch.Tensor:
    if a_dsa.shape != a_ssa.shape:
        raise DimensionError(f"attention shapes differ: {tuple(a_dsa.shape)} vs {tuple(a_ssa.shape)}")
    return omega[0] * a_dsa + omega[1] * a_ssa


def degenerate_rows(attn: torch.Tensor) -> torch.Tensor:
    """Boolean ``(..., L, 1)`` marking rows that had no valid key."""
    return (attn == 0).all(dim=-1, keepdim=True)


class FusionWeights(nn.Module):
    """Two branch weights ``softmax(logits)``; a fixed mode pins them to one branch."""

    def __init__(self, mode: str = "both"):
        super().__init__()
        self.mode = mode
        self.logits = nn.Parameter(torch.zeros(2))

    def forward(self) -> torch.Tensor:
        if self.mode == "dsa":
            return torch.tensor([1.0, 0.0], dtype=self.logits.dtype)
        if self.mode == "ssa":
            return torch.tensor([0.0, 1.0], dtype=self.logits.dtype)
        return torch.softmax(self.logits, dim=0)


class _RelativeIndex:
    def __init__(self, t, h, w, max_frames, extent):
        tt, ii, jj = (a.reshape(-1) for a in np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij"))
        dt = np.clip(tt[None, :] - tt[:, None], 1 - max_frames, max_frames - 1) + max_frames - 1
        di = np.clip(ii[None, :] - ii[:, None], 1 - extent, extent - 1) + extent - 1
        dj = np.clip(jj[None, :] - jj[:, None], 1 - extent, extent - 1) + extent - 1
        side = 2 * extent - 1
        self.rel = torch.from_numpy((dt * side + di) * side + dj).long()


class WaveletSparseAttention(nn.Module):
    """Shared DSA/SSA attention computed on low-frequency tokens."""

    def __init__(self, cfg: VCNetConfig):
        super().__init__()
        self.cfg = cfg
        side = 2 * cfg.bias_extent - 1
        self.bias = nn.Parameter(torch.zeros(cfg.heads, (2 * cfg.max_frames - 1) * side * side))
        self.omega = FusionWeights(cfg.attention)
        self._cache = {}

    def position_bias(self, t, h, w) -> torch.Tensor:
        key = (t, h, w)
        if key not in self._cache:
            self._cache[key] = _RelativeIndex(t, h, w, self.cfg.max_frames, self.cfg.bias_extent)
        return self.bias[:, self._cache[key].rel]

    def attention(self, q_low, k_low, valid_tokens):
        """Fused ``(heads, L, L)`` attention from low-band tokens ``(T, C, h, w)``."""
        t, c, h, w = q_low.shape
        heads = self.cfg.heads
        qt = _tokens(q_low, heads)
        kt = _tokens(k_low, heads)
        bias = self.position_bias(t, h, w)
        valid = valid_tokens.reshape(-1)
        a_dsa = dsa(qt, kt, bias, valid)
        a_ssa = ssa(qt, kt, bias, valid)
        fused = fuse_attention(a_dsa, a_ssa, self.omega())
        # no valid key anywhere: each query keeps its own value
        eye = torch.eye(fused.shape[-1], dtype=fused.dtype)
        return torch.where(degenerate_rows(fused), eye, fused)

    def forward(self, q, k, v, valid_tokens):
        """Complete ``v`` ``(T, C, h, w)``; ``valid_tokens`` is ``(T, h/2, w/2)`` bool."""
        qb, kb, vb = dwt2d_nchw(q), dwt2d_nchw(k), dwt2d_nchw(v)
        attn = self.attention(qb.ll, kb.ll, valid_tokens)
        t, c, h, w = vb.ll.shape
        heads = self.cfg.heads
        bands = [_untokens(attn @ _tokens(band, heads), t, h, w) for band in vb]
        return idwt2d_nchw(*bands)


def _tokens(x: torch.Tensor, heads: int) -> torch.Tensor:
    # (T, C, h, w) -> (heads, T*h*w, C/heads), token order (t, i, j)
    t, c, h, w = x.shape
    return x.permute(0, 2, 3, 1).reshape(t * h * w, heads, c // heads).transpose(0, 1)


def _untokens(x: torch.Tensor, t: int, h: int, w: int) -> torch.Tensor:
    heads, n, d = x.shape
    return x.transpose(0, 1).reshape(t, h, w, heads * d).permute(0, 3, 1, 2)


class WSTBlock(nn.Module):
    """Pre-norm transformer block whose attention is :class:`WaveletSparseAttention`."""

    def __init__(self, cfg: VCNetConfig):
        super().__init__()
        c = cfg.width
        self.norm1 = nn.LayerNorm(c)
        self.qkv = nn.Linear(c, 3 * c)
        self.attn = WaveletSparseAttention(cfg)
        self.proj = nn.Linear(c, c)
        self.norm2 = nn.LayerNorm(c)
        self.ffn = nn.Sequential(nn.Linear(c, 2 * c), nn.GELU(), nn.Linear(2 * c, c))

    def forward(self, f: torch.Tensor, valid_tokens: torch.Tensor) -> torch.Tensor:
        """``f`` is ``(T, h, w, C)``; ``valid_tokens`` is ``(T, h/2, w/2)`` bool."""
        t, h, w, c = f.shape
        if h % 2 or w % 2:
            raise DimensionError(f"feature dims must be even, got {h}x{w}")
        if valid_tokens.shape != (t, h // 2, w // 2):
            raise DimensionError(
                f"token mask {tuple(valid_tokens.shape)} does not match features {(t, h // 2, w // 2)}"
            )
        q, k, v = self.qkv(self.norm1(f)).permute(0, 3, 1, 2).chunk(3, dim=1)
        completed = self.attn(q, k, v, valid_tokens).permute(0, 2, 3, 1)
        f = f + self.proj(completed)
        return f + self.ffn(self.norm2(f))


def token_validity(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """Average-pool a ``(T, H, W, 1)`` mask by ``factor``; valid where the mean is < 0.5."""
    pooled = F.avg_pool2d(mask.permute(0, 3, 1, 2), factor)
    return (pooled[:, 0] < 0.5).detach()


def wst_block(f: torch.Tensor, mask_ds: torch.Tensor, block: WSTBlock) -> torch.Tensor:
    """Run one block with a mask already at the block's feature resolution."""
    return block(f, token_validity(mask_ds, 2))


class VCNet(nn.Module):
    def __init__(self, cfg: VCNetConfig = VCNetConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.enc1 = nn.Conv2d(4, c, 3, padding=1)
        self.enc2 = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1)
        self.blocks = nn.ModuleList(WSTBlock(cfg) for _ in range(cfg.blocks))
        self.dec3 = nn.Conv2d(4 * c + 2 * c, 2 * c, 3, padding=1)
        self.dec2 = nn.Conv2d(2 * c + c, c, 3, padding=1)
        self.head = nn.Conv2d(c, 3, 3, padding=1)

    def raw(self, clip: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Network prediction ``R`` before compositing, ``(T, H, W, 3)`` in (0, 1)."""
        x = torch.cat((clip * (1 - mask), mask), dim=-1).permute(0, 3, 1, 2)
        e1 = F.relu(self.enc1(x))
        e2 = F.relu(self.enc2(e1))
        f = F.relu(self.enc3(e2)).permute(0, 2, 3, 1)
        valid = token_validity(mask, 8)
        for block in self.blocks:
            f = block(f, valid)
        d = F.interpolate(f.permute(0, 3, 1, 2), scale_factor=2, mode="nearest")
        d = F.relu(self.dec3(torch.cat((d, e2), dim=1)))
        d = F.interpolate(d, scale_factor=2, mode="nearest")
        d = F.relu(self.dec2(torch.cat((d, e1), dim=1)))
        return torch.sigmoid(self.head(d)).permute(0, 2, 3, 1)

    def forward(self, clip: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if clip.ndim != 4 or clip.shape[-1] != 3:
            raise DimensionError(f"expected (T, H, W, 3) clip, got {tuple(clip.shape)}")
        if mask.shape != clip.shape[:3] + (1,):
            raise DimensionError(f"mask {tuple(mask.shape)} misaligned with clip {tuple(clip.shape)}")
        if clip.shape[1] % 8 or clip.shape[2] % 8:
            raise DimensionError(f"H and W must be divisible by 8, got {clip.shape[1]}x{clip.shape[2]}")
        out = (1 - mask) * clip + mask * self.raw(clip, mask)
        return out.clamp(0.0, 1.0)


def vcnet_forward(vcnet: VCNet, clip: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return vcnet(clip, mask)
