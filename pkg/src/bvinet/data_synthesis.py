"""Synthetic corruption of clean clips.

A free-form stroke mask is drawn, animated over the clip, filled with foreign
content and then feathered: the composite is repeatedly blended with a
Gaussian-smoothed copy of itself inside a narrow band around the mask edge so
the boundary no longer gives the corruption away. Nothing outside
``dilate(mask, band)`` is ever modified.
"""
from dataclasses import dataclass, field
from pathlib import Path
import math

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DimensionError, GenerationError, ValidationError

FILL_KINDS = ("natural", "noise", "constant")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(frozen=True)
class StrokeParams:
    """Stroke geometry in pixels. Defaults are for 240-pixel-high frames."""

    strokes: tuple = (1, 4)
    vertices: tuple = (4, 12)
    width: tuple = (8, 24)
    step: tuple = (20, 60)
    max_turn: float = math.pi / 4
    coverage: tuple = (0.05, 0.40)
    retries: int = 200

    def __post_init__(self):
        lo, hi = self.coverage
        if not 0 < lo < hi < 1:
            raise ConfigError(f"coverage bounds must satisfy 0 < min < max < 1, got {self.coverage}")
        if self.width[0] < 1 or self.width[0] > self.width[1]:
            raise ConfigError(f"invalid width range {self.width}")
        for name in ("strokes", "vertices", "step"):
            a, b = getattr(self, name)
            if a < 1 or a > b:
                raise ConfigError(f"invalid {name} range {(a, b)}")
        if self.retries < 1:
            raise ConfigError("retries must be positive")

    def scaled(self, height: int) -> "StrokeParams":
        """Rescale widths and step lengths from the 240p reference to ``height``."""
        f = height / 240.0

        def sc(r):
            return (max(1, round(r[0] * f)), max(1, round(r[1] * f)))

        return StrokeParams(self.strokes, self.vertices, sc(self.width), sc(self.step),
                            self.max_turn, self.coverage, self.retries)


@dataclass(frozen=True)
class MotionParams:
    """Per-frame mask motion.

    ``velocity`` fixes the drift in pixels/frame as ``(dx, dy)``; when None it
    is drawn uniformly from ``[-velocity_max, velocity_max]`` per axis. The
    jitter terms are independent per frame, not accumulated.
    """

    velocity: tuple | None = None
    velocity_max: float = 1.0
    translate_jitter: float = 1.0
    rotate_jitter: float = 3.0
    scale_jitter: float = 0.03

    @classmethod
    def still(cls) -> "MotionParams":
        return cls(velocity=(0.0, 0.0), translate_jitter=0.0, rotate_jitter=0.0, scale_jitter=0.0)


@dataclass(frozen=True)
class SmoothingParams:
    iterations: int = 3
    sigma: float = 1.5
    band: int = 4

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.band < 0:
            raise ConfigError("band must be >= 0")


@dataclass
class ClipTriple:
    x: np.ndarray  # corrupted (T, H, W, 3)
    y: np.ndarray  # ground truth (T, H, W, 3)
    m: np.ndarray  # binary mask (T, H, W, 1)
    seed: int
    sources: str = ""
    fill: str = "natural"
    meta: dict = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        return float(self.m.mean())


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _draw_strokes(h, w, p: StrokeParams, rng) -> np.ndarray:
    mask = np.zeros((h, w), np.uint8)
    for _ in range(rng.integers(p.strokes[0], p.strokes[1] + 1)):
        n_vertex = rng.integers(p.vertices[0], p.vertices[1] + 1)
        width = int(rng.integers(p.width[0], p.width[1] + 1))
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        angle = rng.uniform(0, 2 * math.pi)
        cv2.circle(mask, (int(x), int(y)), width // 2, 1, -1)
        for _ in range(n_vertex):
            angle += rng.uniform(-p.max_turn, p.max_turn)
            length = rng.uniform(p.step[0], p.step[1])
            dx, dy = length * math.cos(angle), length * math.sin(angle)
            # bounce off the frame edge instead of piling strokes up along it
            if not 0 <= x + dx <= w - 1:
                dx = -dx
            if not 0 <= y + dy <= h - 1:
                dy = -dy
            angle = math.atan2(dy, dx)
            nx = float(np.clip(x + dx, 0, w - 1))
            ny = float(np.clip(y + dy, 0, h - 1))
            cv2.line(mask, (int(x), int(y)), (int(nx), int(ny)), 1, width)
            cv2.circle(mask, (int(nx), int(ny)), width // 2, 1, -1)
            x, y = nx, ny
    return mask


def gen_freeform_mask(h: int, w: int, p: StrokeParams = StrokeParams(), seed=None) -> np.ndarray:
    """Binary ``(H, W)`` float32 stroke mask with coverage inside ``p.coverage``."""
    if min(h, w) < 2 * p.width[1]:
        raise DimensionError(f"frame {h}x{w} too small for brush width {p.width[1]}")
    rng = _rng(seed)
    lo, hi = p.coverage
    for _ in range(p.retries):
        mask = _draw_strokes(h, w, p, rng)
        cov = mask.mean()
        if lo <= cov <= hi:
            return mask.astype(np.float32)
    raise GenerationError(f"no mask with coverage in {p.coverage} after {p.retries} tries")


def _affines(mask, t, motion: MotionParams, rng):
    h, w = mask.shape
    if motion.velocity is None:
        vel = rng.uniform(-motion.velocity_max, motion.velocity_max, size=2)
    else:
        vel = np.asarray(motion.velocity, float)
    ys, xs = np.nonzero(mask)
    cx, cy = (xs.mean(), ys.mean()) if len(xs) else (w / 2, h / 2)
    mats = [np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])]
    for k in range(1, t):
        jit = rng.uniform(-1, 1, size=4)
        tx = vel[0] * k + motion.translate_jitter * jit[0]
        ty = vel[1] * k + motion.translate_jitter * jit[1]
        # keep the mask centroid inside the frame so it never vanishes
        tx = float(np.clip(tx, -cx, w - 1 - cx))
        ty = float(np.clip(ty, -cy, h - 1 - cy))
        angle = motion.rotate_jitter * jit[2]
        scale = 1.0 + motion.scale_jitter * jit[3]
        mat = cv2.getRotationMatrix2D((cx, cy), angle, scale)
        mat[:, 2] += (tx, ty)
        mats.append(mat)
    return mats


def _warp(img, mat, interp, border):
    h, w = img.shape[:2]
    out = cv2.warpAffine(img, mat, (w, h), flags=interp, borderMode=border, borderValue=0)
    return out.reshape(img.shape)


def animate_mask(mask, t: int, motion: MotionParams = MotionParams(), seed=None) -> np.ndarray:
    """Move ``mask`` over ``t`` frames; frame 0 is the input mask. Returns ``(T, H, W)``."""
    masks, _ = _animate(np.asarray(mask, np.float32), t, motion, _rng(seed))
    return masks


def _animate(mask, t, motion, rng):
    if t < 1:
        raise ConfigError("T must be >= 1")
    mats = _affines(mask, t, motion, rng)
    frames = [_warp(mask, m, cv2.INTER_NEAREST, cv2.BORDER_CONSTANT) for m in mats]
    return (np.stack(frames) > 0.5).astype(np.float32), mats


def _band_weight(m: np.ndarray, band: int) -> np.ndarray:
    # 1 at the edge, ramping to 1/band at distance `band` on either side, 0 beyond
    if band == 0 or m.all() or not m.any():
        return np.zeros(m.shape, np.float64)
    inside = m > 0.5
    dist = np.where(inside, ndimage.distance_transform_edt(inside),
                    ndimage.distance_transform_edt(~inside))
    weight = 1.0 - (dist - 1.0) / band
    return np.where(dist <= band, np.clip(weight, 0.0, 1.0), 0.0)


def dilate(m: np.ndarray, radius: int) -> np.ndarray:
    """Euclidean dilation: pixels within ``radius`` of a mask pixel (radius 0 = identity)."""
    m = np.asarray(m) > 0.5
    if radius <= 0 or not m.any():
        return m
    return ndimage.distance_transform_edt(~m) <= radius


def blend_fill(y, m, u, s: SmoothingParams = SmoothingParams()) -> np.ndarray:
    """Composite ``u`` into ``y`` under ``m`` and feather the seam."""
    y = np.asarray(y, np.float64)
    u = np.asarray(u, np.float64)
    m2 = np.asarray(m, np.float64).reshape(y.shape[:2])
    if y.shape != u.shape or y.ndim != 3:
        raise DimensionError(f"frame {y.shape} and content {u.shape} must match as (H, W, C)")
    mc = m2[..., None]
    x = (1 - mc) * y + mc * u
    weight = _band_weight(m2, s.band)[..., None]
    band = weight > 0
    if not band.any():
        return x
    for _ in range(s.iterations):
        smooth = ndimage.gaussian_filter(x, sigma=(s.sigma, s.sigma, 0), mode="reflect")
        x = np.where(band, (1 - weight) * x + weight * smooth, x)
    return x


def boundary_gradient(x, m) -> float:
    """Mean gradient magnitude of the channel-mean image over mask-edge pixels."""
    m = np.asarray(m).reshape(np.asarray(x).shape[:2]) > 0.5
    edge = ndimage.binary_dilation(m) & ~ndimage.binary_erosion(m, border_value=1)
    if not edge.any():
        raise ValidationError("mask has no boundary")
    gray = np.asarray(x, np.float64).mean(axis=-1)
    gy, gx = np.gradient(gray)
    return float(np.hypot(gx, gy)[edge].mean())


def _fit(img, h, w):
    ih, iw = img.shape[:2]
    if ih < h or iw < w:
        f = max(h / ih, w / iw)
        img = cv2.resize(img, (math.ceil(iw * f), math.ceil(ih * f)), interpolation=cv2.INTER_LINEAR)
    return img


def make_fill(kind: str, h: int, w: int, rng, pool=None):
    """Return ``(content, source_id)`` for one clip's corruption content."""
    if kind == "noise":
        return np.clip(rng.normal(0.5, 0.25, size=(h, w, 3)), 0, 1), "gaussian-noise"
    if kind == "constant":
        color = rng.uniform(0, 1, size=3)
        return np.broadcast_to(color, (h, w, 3)).copy(), "constant:" + ",".join(f"{c:.3f}" for c in color)
    if kind != "natural":
        raise ConfigError(f"fill must be one of {FILL_KINDS}, got {kind!r}")
    if not pool:
        raise ConfigError("natural fill needs a non-empty content pool")
    k = int(rng.integers(len(pool)))
    name, img = pool[k] if isinstance(pool[k], tuple) else (f"pool[{k}]", pool[k])
    img = _fit(np.asarray(img, np.float64), h, w)
    oy = int(rng.integers(img.shape[0] - h + 1))
    ox = int(rng.integers(img.shape[1] - w + 1))
    return img[oy:oy + h, ox:ox + w].copy(), f"{name}@{oy},{ox}"


def synth_clip(y, pool=None, p: StrokeParams | None = None, s: SmoothingParams = SmoothingParams(),
               seed: int = 0, motion: MotionParams = MotionParams(), fill: str = "natural",
               gt_source: str = "") -> ClipTriple:
    """Corrupt clean clip ``y`` ``(T, H, W, 3)``; one seed fixes every random choice."""
    y = np.asarray(y, np.float64)
    if y.ndim != 4 or y.shape[-1] != 3:
        raise DimensionError(f"expected (T, H, W, 3) clip, got {y.shape}")
    if y.min() < 0 or y.max() > 1:
        raise ValidationError("ground-truth frames must lie in [0, 1]")
    t, h, w, _ = y.shape
    p = p or StrokeParams().scaled(h)
    rng = np.random.default_rng(seed)
    base = gen_freeform_mask(h, w, p, rng)
    masks, mats = _animate(base, t, motion, rng)
    content, source = make_fill(fill, h, w, rng, pool)
    x = np.empty_like(y)
    for k in range(t):
        u = _warp(content, mats[k], cv2.INTER_LINEAR, cv2.BORDER_REFLECT)
        x[k] = blend_fill(y[k], masks[k], u, s)
    sources = ";".join(v for v in (gt_source, source) if v)
    return ClipTriple(x, y.copy(), masks[..., None], int(seed), sources, fill)


# ---------------------------------------------------------------- storage


def _to_u8(a):
    return np.clip(np.rint(np.asarray(a) * 255.0), 0, 255).astype(np.uint8)


def write_frames(directory, frames):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(frames):
        arr = _to_u8(frame)
        if arr.ndim == 3 and arr.shape[-1] == 1:
            arr = arr[..., 0]
        Image.fromarray(arr).save(directory / f"{k:05d}.png")


def list_images(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_image(path, gray=False) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L" if gray else "RGB")
        return np.asarray(im, np.float64) / 255.0


def read_frames(directory, gray=False) -> np.ndarray:
    files = list_images(directory)
    if not files:
        raise ValidationError(f"no frames in {directory}")
    frames = [read_image(f, gray) for f in files]
    arr = np.stack(frames)
    return arr[..., None] if gray else arr


def write_clip(directory, triple: ClipTriple):
    directory = Path(directory)
    write_frames(directory / "gt", triple.y)
    write_frames(directory / "corrupted", triple.x)
    write_frames(directory / "mask", triple.m)
    t, h, w = triple.m.shape[:3]
    meta = {"seed": triple.seed, "T": t, "H": h, "W": w,
            "coverage": f"{triple.coverage:.6f}", "sources": triple.sources, "fill": triple.fill}
    meta.update(triple.meta)
    (directory / "meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_clip(directory) -> ClipTriple:
    directory = Path(directory)
    meta = read_meta(directory / "meta") if (directory / "meta").exists() else {}
    y = read_frames(directory / "gt")
    x = read_frames(directory / "corrupted")
    m = (read_frames(directory / "mask", gray=True) > 0.5).astype(np.float64)
    if not (x.shape == y.shape and m.shape[:3] == y.shape[:3]):
        raise DimensionError(f"clip {directory} has misaligned gt/corrupted/mask frames")
    return ClipTriple(x, y, m, int(meta.get("seed", 0)), meta.get("sources", ""),
                      meta.get("fill", "natural"), meta)


def list_clips(root) -> list:
    root = Path(root)
    return sorted(d for d in root.iterdir() if d.is_dir() and (d / "gt").is_dir())


def load_videos(gt_dir) -> list:
    """``(name, frames)`` for each frame folder under ``gt_dir`` (or ``gt_dir`` itself)."""
    gt_dir = Path(gt_dir)
    dirs = sorted(d for d in gt_dir.iterdir() if d.is_dir() and list_images(d))
    if not dirs and list_images(gt_dir):
        dirs = [gt_dir]
    if not dirs:
        raise ValidationError(f"no frame folders under {gt_dir}")
    return [(d.name, read_frames(d)) for d in dirs]


def load_pool(content_dir) -> list:
    content_dir = Path(content_dir)
    files = sorted(p for p in content_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValidationError(f"no content images under {content_dir}")
    return [(str(p.relative_to(content_dir)), read_image(p)) for p in files]


def synth_dataset(videos, pool, out, clips: int, frames: int, seed: int, cfg, fill=None) -> list:
    """Write ``clips`` ClipTriples under ``out/clip%05d``; returns the clip folders.

    ``cfg`` is a :class:`~bvinet.config.SynthConfig`. A master generator
    seeded by ``seed`` picks the source window of each clip and that clip's
    own seed, so the whole dataset is reproducible.
    """
    out = Path(out)
    rng = np.random.default_rng(seed)
    written = []
    usable = [(n, v) for n, v in videos if v.shape[0] >= frames and v.shape[1] >= cfg.height and v.shape[2] >= cfg.width]
    if not usable:
        raise ValidationError(f"no source video has {frames} frames of at least {cfg.height}x{cfg.width}")
    for i in range(clips):
        name, video = usable[int(rng.integers(len(usable)))]
        t0 = int(rng.integers(video.shape[0] - frames + 1))
        i0 = int(rng.integers(video.shape[1] - cfg.height + 1))
        j0 = int(rng.integers(video.shape[2] - cfg.width + 1))
        clip_seed = int(rng.integers(1 << 31))
        y = video[t0:t0 + frames, i0:i0 + cfg.height, j0:j0 + cfg.width]
        triple = synth_clip(y, pool, cfg.strokes, cfg.smoothing, clip_seed, cfg.motion, fill or cfg.fill,
                            gt_source=f"{name}[{t0}:{t0 + frames}]@{i0},{j0}")
        folder = out / f"clip{i:05d}"
        write_clip(folder, triple)
        written.append(folder)
    return written
