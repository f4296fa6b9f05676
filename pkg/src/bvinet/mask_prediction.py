"""Mask prediction network (MPNet).

Two stages locate corrupted pixels without any mask input:

* :class:`ShortTermPrediction` looks at one frame at a time with a
  DWT-downsampling encoder-decoder.
* :class:`LongTermRefinement` re-reads the whole clip together with the
  short-term masks and refines them through windowed spatio-temporal
  attention at the bottleneck.

Clips are channels-last tensors ``(T, H, W, C)``; masks use 1 = corrupted.
"""
from dataclasses import dataclass
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError
from .wavelet import dwt2d_nchw, idwt2d_nchw

_LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class STPConfig:
    base_channels: int = 8
    stages: int = 3
    res_blocks: int = 2

    def __post_init__(self):
        if self.base_channels < 1 or self.res_blocks < 1:
            raise ConfigError("base_channels and res_blocks must be positive")
        if self.stages != 3:
            raise ConfigError("the encoder has exactly 3 stages")


@dataclass(frozen=True)
class LTRConfig:
    base_channels: int = 8
    stages: int = 3
    res_blocks: int = 2
    blocks: int = 1
    groups: int = 4
    radius: int = 3
    max_frames: int = 8
    relative_bias: bool = True

    def __post_init__(self):
        if self.base_channels < 1 or self.blocks < 1 or self.groups < 1:
            raise ConfigError("base_channels, blocks and groups must be positive")
        if self.stages != 3:
            raise ConfigError("the encoder has exactly 3 stages")
        if self.radius < 0 or self.max_frames < 1:
            raise ConfigError("radius must be >= 0 and max_frames >= 1")
        if self.width % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide attention width {self.width}"
            )

    @property
    def width(self) -> int:
        return 4 * self.base_channels


def _check_spatial(h: int, w: int, factor: int = 8):
    if h % factor or w % factor:
        raise DimensionError(f"H and W must be divisible by {factor}, got {h}x{w}")


def _to_nchw(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 3, 1, 2)


def _to_nhwc(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 2, 3, 1)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class DWTDown(nn.Module):
    """Halve resolution with a Haar DWT, then mix the 4C subbands with a 1x1 conv."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.mix = nn.Conv2d(4 * in_ch, out_ch, 1)

    def forward(self, x):
        return self.mix(torch.cat(tuple(dwt2d_nchw(x)), dim=1))


class IDWTUp(nn.Module):
    """Mirror of :class:`DWTDown`: predict four subbands and synthesize."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.out_ch = out_ch
        self.mix = nn.Conv2d(in_ch, 4 * out_ch, 1)

    def forward(self, x):
        return idwt2d_nchw(*torch.split(self.mix(x), self.out_ch, dim=1))


class Encoder(nn.Module):
    """Stem conv, then three (DWT down -> residual blocks) stages at widths c*{1,2,4}."""

    def __init__(self, in_ch: int, base: int, res_blocks: int = 2):
        super().__init__()
        widths = [base, base, 2 * base, 4 * base]
        self.stem = nn.Conv2d(in_ch, base, 3, padding=1)
        self.downs = nn.ModuleList(DWTDown(widths[i], widths[i + 1]) for i in range(3))
        self.stages = nn.ModuleList(
            nn.Sequential(*(ResBlock(widths[i + 1]) for _ in range(res_blocks)))
            for i in range(3)
        )

    def forward(self, x):
        feats = [F.relu(self.stem(x))]
        for down, stage in zip(self.downs, self.stages):
            feats.append(stage(down(feats[-1])))
        # deepest first; the rest are skips
        return feats[::-1]


class Decoder(nn.Module):
    def __init__(self, base: int):
        super().__init__()
        widths = [4 * base, 2 * base, base, base]
        self.ups = nn.ModuleList(IDWTUp(widths[i], widths[i + 1]) for i in range(3))
        self.fuse = nn.ModuleList(
            nn.Conv2d(2 * widths[i + 1], widths[i + 1], 3, padding=1) for i in range(3)
        )
        self.refine = nn.ModuleList(ResBlock(widths[i + 1]) for i in range(3))
        self.head = nn.Conv2d(base, 1, 1)

    def forward(self, feats):
        x, skips = feats[0], feats[1:]
        for up, fuse, refine, skip in zip(self.ups, self.fuse, self.refine, skips):
            x = refine(F.relu(fuse(torch.cat((up(x), skip), dim=1))))
        return self.head(x)


class ShortTermPrediction(nn.Module):
    """Per-frame soft mask predictor; frames are treated as an independent batch."""

    def __init__(self, cfg: STPConfig = STPConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(3, cfg.base_channels, cfg.res_blocks)
        self.decoder = Decoder(cfg.base_channels)

    def logits(self, frames: torch.Tensor) -> torch.Tensor:
        _check_spatial(frames.shape[1], frames.shape[2])
        return _to_nhwc(self.decoder(self.encoder(_to_nchw(frames))))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(frames))


def stp_forward(stp: ShortTermPrediction, frame: torch.Tensor) -> torch.Tensor:
    """Soft mask ``(H, W, 1)`` for a single ``(H, W, 3)`` frame."""
    if frame.ndim != 3 or frame.shape[-1] != 3:
        raise DimensionError(f"expected (H, W, 3) frame, got {tuple(frame.shape)}")
    return stp(frame.unsqueeze(0))[0]


DENSE_LIMIT = 1 << 20  # L*L above this switches to the gathered-window path


class _WindowIndex:
    """Neighbour tables for a (T, H, W) grid with a full-temporal, radius-r window.

    The radius is clamped to the grid. ``keys/valid/rel`` list each query's
    window slots (gather form, ``(L, K)``); :meth:`dense` gives the same
    window as an ``(L, L)`` adjacency. ``rel`` always indexes a bias table laid
    out for the configured radius.
    """

    def __init__(self, t: int, h: int, w: int, radius: int, max_frames: int):
        self.shape = (t, h, w)
        self.radius, self.max_frames = radius, max_frames
        r = min(radius, max(h, w) - 1)
        ti, ii, jj = (a.reshape(-1, 1) for a in np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij"))
        kt, di, dj = (a.reshape(1, -1) for a in np.meshgrid(np.arange(t), np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij"))
        ki, kj = ii + di, jj + dj
        valid = (ki >= 0) & (ki < h) & (kj >= 0) & (kj < w)
        kt = np.broadcast_to(kt, valid.shape)
        self.keys = torch.from_numpy(np.where(valid, (kt * h + ki) * w + kj, 0)).long()
        self.valid = torch.from_numpy(np.ascontiguousarray(valid))
        self.rel = torch.from_numpy(self._rel(kt - ti, di, dj)).long()
        self._dense = None

    def _rel(self, dt, di, dj):
        full = 2 * self.radius + 1
        m = self.max_frames
        dt = np.clip(dt, 1 - m, m - 1) + m - 1
        di = np.clip(di, -self.radius, self.radius) + self.radius
        dj = np.clip(dj, -self.radius, self.radius) + self.radius
        return np.ascontiguousarray((dt * full + di) * full + dj)

    def dense(self):
        if self._dense is None:
            t, h, w = self.shape
            r = min(self.radius, max(h, w) - 1)
            tt, ii, jj = (a.reshape(-1) for a in np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij"))
            di = ii[None, :] - ii[:, None]
            dj = jj[None, :] - jj[:, None]
            adj = (np.abs(di) <= r) & (np.abs(dj) <= r)
            rel = self._rel(tt[None, :] - tt[:, None], di, dj)
            self._dense = (torch.from_numpy(adj), torch.from_numpy(rel).long())
        return self._dense


class WindowedSTAttention(nn.Module):
    """Grouped attention over an (all frames) x (2r+1)^2 neighbourhood.

    Produces ``E + Conv(D) * G`` where ``D`` concatenates the per-group
    aggregated values and ``G`` is, per position, the largest affinity any
    query assigns to it as a key, maximised over groups.

    Small grids run as dense ``(L, L)`` attention with a window mask; large
    ones gather each query's window. Both give the same result.
    """

    def __init__(self, cfg: LTRConfig):
        super().__init__()
        c = cfg.width
        self.cfg = cfg
        self.qkv = nn.Linear(c, 3 * c)
        self.out = nn.Conv2d(c, c, 3, padding=1)
        side = 2 * cfg.radius + 1
        if cfg.relative_bias:
            self.bias = nn.Parameter(torch.zeros(cfg.groups, (2 * cfg.max_frames - 1) * side * side))
        else:
            self.register_parameter("bias", None)
        self._index_cache = {}

    def _index(self, t, h, w) -> _WindowIndex:
        key = (t, h, w)
        if key not in self._index_cache:
            self._index_cache[key] = _WindowIndex(t, h, w, self.cfg.radius, self.cfg.max_frames)
        return self._index_cache[key]

    def _project(self, e):
        n = self.cfg.groups
        c = e.shape[-1]
        q, k, v = self.qkv(e.reshape(-1, c)).chunk(3, dim=-1)
        return tuple(a.reshape(-1, n, c // n).transpose(0, 1) for a in (q, k, v))

    def affinity(self, e: torch.Tensor, dense: bool | None = None):
        """Softmax affinities: ``(N, L, L)`` when dense, else ``(N, L, K)`` window slots."""
        return self._attend(e, dense)[0]

    def _attend(self, e, dense):
        t, h, w, c = e.shape
        if c != self.cfg.width:
            raise DimensionError(f"expected {self.cfg.width} channels, got {c}")
        idx = self._index(t, h, w)
        q, k, v = self._project(e)
        scale = math.sqrt(q.shape[-1])
        n_tok = t * h * w
        if dense is None:
            dense = n_tok * n_tok <= DENSE_LIMIT
        if dense:
            adj, rel = idx.dense()
            logits = q @ k.transpose(1, 2) / scale
            if self.bias is not None:
                logits = logits + self.bias[:, rel]
            attn = torch.softmax(logits.masked_fill(~adj, float("-inf")), dim=-1)
            agg = attn @ v
            gate = attn.amax(dim=(0, 1))
        else:
            logits = torch.einsum("nld,nlkd->nlk", q, k[:, idx.keys]) / scale
            if self.bias is not None:
                logits = logits + self.bias[:, idx.rel]
            attn = torch.softmax(logits.masked_fill(~idx.valid, float("-inf")), dim=-1)
            agg = torch.einsum("nlk,nlkd->nld", attn, v[:, idx.keys])
            per_slot = attn.amax(dim=0)
            gate = per_slot.new_zeros(n_tok).scatter_reduce(
                0, idx.keys.reshape(-1), per_slot.reshape(-1), "amax", include_self=True
            )
        return attn, agg, gate

    def forward(self, e: torch.Tensor, dense: bool | None = None) -> torch.Tensor:
        t, h, w, c = e.shape
        _, agg, gate = self._attend(e, dense)
        agg = agg.transpose(0, 1).reshape(t, h, w, c)
        return e + _to_nhwc(self.out(_to_nchw(agg))) * gate.reshape(t, h, w, 1)


def windowed_st_attention(e: torch.Tensor, block: WindowedSTAttention) -> torch.Tensor:
    return block(e)


class LongTermRefinement(nn.Module):
    """Clip-level refinement of short-term masks.

    The decoder predicts a correction to the short-term logits, so an
    untrained refinement starts from the short-term estimate.
    """

    def __init__(self, cfg: LTRConfig = LTRConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(4, cfg.base_channels, cfg.res_blocks)
        self.blocks = nn.ModuleList(WindowedSTAttention(cfg) for _ in range(cfg.blocks))
        self.decoder = Decoder(cfg.base_channels)

    def forward(self, clip: torch.Tensor, m_s: torch.Tensor) -> torch.Tensor:
        if clip.shape[:3] != m_s.shape[:3]:
            raise DimensionError(
                f"clip {tuple(clip.shape)} and masks {tuple(m_s.shape)} are misaligned"
            )
        _check_spatial(clip.shape[1], clip.shape[2])
        feats = self.encoder(_to_nchw(torch.cat((clip, m_s), dim=-1)))
        e = _to_nhwc(feats[0])
        for block in self.blocks:
            e = block(e)
        delta = _to_nhwc(self.decoder([_to_nchw(e)] + feats[1:]))
        return torch.sigmoid(torch.logit(m_s, eps=_LOGIT_EPS) + delta)


def ltr_forward(ltr: LongTermRefinement, clip: torch.Tensor, m_s: torch.Tensor) -> torch.Tensor:
    return ltr(clip, m_s)


class MPNet(nn.Module):
    def __init__(self, stp_cfg: STPConfig = STPConfig(), ltr_cfg: LTRConfig = LTRConfig()):
        super().__init__()
        self.stp = ShortTermPrediction(stp_cfg)
        self.ltr = LongTermRefinement(ltr_cfg)

    def forward(self, clip: torch.Tensor):
        """Return ``(M^s, M^l)`` soft masks for a ``(T, H, W, 3)`` clip."""
        m_s = self.stp(clip)
        return m_s, self.ltr(clip, m_s)


def binarize(soft, tau: float = 0.5):
    """1 where ``soft > tau`` (ties go to 0)."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    if isinstance(soft, torch.Tensor):
        return (soft > tau).to(soft.dtype if soft.is_floating_point() else torch.float32)
    soft = np.asarray(soft)
    return (soft > tau).astype(soft.dtype if soft.dtype.kind == "f" else np.float32)
