"""Small self-contained clips for smoke tests and demos.

Clean clips are windows panning across a still image, which gives real
texture and rigid motion without any video files.
"""
from pathlib import Path

import numpy as np

from .data_synthesis import write_frames


def panning_clip(image, frames: int, height: int, width: int, velocity=(1, 0), origin=None, rng=None):
    """``(T, H, W, 3)`` clip cut from ``image`` by a window moving ``velocity`` px/frame."""
    image = np.asarray(image, np.float64)
    if image.max() > 1.0:
        image = image / 255.0
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    image = image[..., :3]
    vx, vy = velocity
    span_x = abs(vx) * (frames - 1)
    span_y = abs(vy) * (frames - 1)
    ih, iw = image.shape[:2]
    if ih < height + span_y or iw < width + span_x:
        raise ValueError("image too small for the requested pan")
    if origin is None:
        rng = rng or np.random.default_rng(0)
        origin = (int(rng.integers(ih - height - span_y + 1)), int(rng.integers(iw - width - span_x + 1)))
    oy = origin[0] + (span_y if vy < 0 else 0)
    ox = origin[1] + (span_x if vx < 0 else 0)
    out = [image[oy + k * vy: oy + k * vy + height, ox + k * vx: ox + k * vx + width] for k in range(frames)]
    return np.stack(out)


def procedural_image(size=256, seed=0, slope=2.0) -> np.ndarray:
    """Colour image with a 1/f^slope power spectrum, scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fx, fy)
    radius[0, 0] = 1.0
    amp = radius ** (-slope / 2)
    amp[0, 0] = 0.0
    chans = []
    for _ in range(3):
        phase = rng.uniform(0, 2 * np.pi, (size, size))
        chans.append(np.real(np.fft.ifft2(amp * np.exp(1j * phase))))
    img = np.stack(chans, axis=-1)
    # mix channels so colours are correlated like natural images
    img = img @ rng.uniform(0.2, 1.0, (3, 3))
    img -= img.min()
    return img / img.max()


def write_toy_sources(root, videos=4, frames=12, height=64, width=64, content=8, seed=0):
    """Write ``root/gt/<video>/%05d.png`` panning videos and ``root/content/*.png`` images."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for v in range(videos):
        img = procedural_image(256, seed=int(rng.integers(1 << 31)))
        vel = tuple(int(a) for a in rng.integers(-2, 3, size=2))
        write_frames(root / "gt" / f"video{v:03d}", panning_clip(img, frames, height, width, vel, rng=rng))
    for c in range(content):
        img = procedural_image(128, seed=int(rng.integers(1 << 31)), slope=rng.uniform(1.0, 3.0))
        write_frames(root / "content" / f"img{c:03d}", [img])
    return root / "gt", root / "content"
