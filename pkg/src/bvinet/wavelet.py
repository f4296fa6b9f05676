"""Single-level orthonormal 2-D Haar transform.

Public functions work on channels-last feature maps of shape ``(T, H, W, C)``.
The ``*_nchw`` helpers are the same transform on channels-first batches and
are what the networks call internally; they skip input validation.
"""
from typing import NamedTuple

import numpy as np
import torch

from .errors import DimensionError, ValidationError


class Subbands(NamedTuple):
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def dwt2d(x) -> Subbands:
    """Haar analysis of every 2x2 block ``[a, b; c, d]`` per frame and channel.

    ``LL=(a+b+c+d)/2``, ``LH=(a-b+c-d)/2``, ``HL=(a+b-c-d)/2``,
    ``HH=(a-b-c+d)/2``. The basis is orthonormal, so the total energy of
    the four subbands equals the energy of ``x``.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"expected (T, H, W, C), got shape {tuple(x.shape)}")
    h, w = x.shape[1], x.shape[2]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even, got {h}x{w}")
    if not torch.isfinite(x).all():
        raise ValidationError("dwt2d input contains non-finite values")
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    return Subbands(
        (a + b + c + d) / 2,
        (a - b + c - d) / 2,
        (a + b - c - d) / 2,
        (a - b - c + d) / 2,
    )


def idwt2d(s: Subbands) -> torch.Tensor:
    """Exact inverse of :func:`dwt2d`; output is ``(T, 2H', 2W', C)``."""
    ll, lh, hl, hh = (_as_tensor(t) for t in s)
    shape = ll.shape
    if ll.ndim != 4 or any(t.shape != shape for t in (lh, hl, hh)):
        raise DimensionError(
            "subband shapes differ: "
            + ", ".join(str(tuple(t.shape)) for t in (ll, lh, hl, hh))
        )
    t, h, w, ch = shape
    out = ll.new_empty((t, 2 * h, 2 * w, ch))
    out[:, 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[:, 0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[:, 1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[:, 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def dwt2d_nchw(x: torch.Tensor) -> Subbands:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return Subbands(
        (a + b + c + d) / 2,
        (a - b + c - d) / 2,
        (a + b - c - d) / 2,
        (a - b - c + d) / 2,
    )


def idwt2d_nchw(ll, lh, hl, hh) -> torch.Tensor:
    # interleave via stack/reshape so autograd sees a single graph node chain
    top_left = (ll + lh + hl + hh) / 2
    top_right = (ll - lh + hl - hh) / 2
    bot_left = (ll + lh - hl - hh) / 2
    bot_right = (ll - lh - hl + hh) / 2
    top = torch.stack((top_left, top_right), dim=-1).flatten(-2)
    bot = torch.stack((bot_left, bot_right), dim=-1).flatten(-2)
    return torch.stack((top, bot), dim=-2).flatten(-3, -2)


def energy(x) -> float:
    """Sum of squares of a tensor or of all subbands of a :class:`Subbands`."""
    if isinstance(x, Subbands):
        return float(sum((_as_tensor(t).double() ** 2).sum() for t in x))
    return float((_as_tensor(x).double() ** 2).sum())
