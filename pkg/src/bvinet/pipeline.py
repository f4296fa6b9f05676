"""Model assembly, blind inference and the training loop."""
from dataclasses import asdict, dataclass, field
import logging
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt_io
from .config import RunConfig
from .data_synthesis import ClipTriple, list_clips, read_clip
from .errors import DimensionError, ValidationError
from .losses import completion_loss, consistency_loss, mask_loss, total_loss
from .mask_prediction import MPNet, binarize
from .video_completion import VCNet

log = logging.getLogger(__name__)

TRACE_NAME = "trace.log"
CHECKPOINT_NAME = "checkpoint.bvc"


class BVINet(nn.Module):
    def __init__(self, cfg: RunConfig = RunConfig()):
        super().__init__()
        self.cfg = cfg
        self.mpnet = MPNet(cfg.stp, cfg.ltr)
        self.vcnet = VCNet(cfg.vcnet)

    def forward(self, clip: torch.Tensor):
        """Return ``(Y_hat, M_s, M_l)`` for a corrupted ``(T, H, W, 3)`` clip."""
        m_s, m_l = self.mpnet(clip)
        return self.vcnet(clip, m_l), m_s, m_l


def build_model(cfg: RunConfig) -> BVINet:
    torch.manual_seed(cfg.seed)
    return BVINet(cfg)


def _as_clip(x) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x)
    if x.ndim != 4 or x.shape[-1] != 3:
        raise DimensionError(f"expected (T, H, W, 3) clip, got {tuple(x.shape)}")
    if x.shape[1] % 8 or x.shape[2] % 8:
        raise DimensionError(f"H and W must be divisible by 8, got {x.shape[1]}x{x.shape[2]}")
    return x


@torch.no_grad()
def blind_inpaint(model: BVINet, x):
    """Restore a corrupted clip with no mask input.

    Returns ``(Y_hat, M_pred)``: the completed clip and the binarized refined
    mask. The completion itself is driven by the soft refined mask.
    """
    was_training = model.training
    model.eval()
    clip = _as_clip(x).to(next(model.parameters()).dtype)
    y_hat, _, m_l = model(clip)
    model.train(was_training)
    return y_hat, binarize(m_l, 0.5)


def clip_losses(model: BVINet, x, y, m, cfg: RunConfig) -> dict:
    y_hat, m_s, m_l = model(x)
    l_m = mask_loss(m_s, m_l, m)
    l_v = completion_loss(y_hat, y, m)
    l_c = consistency_loss(m_l, m, y_hat, x, cfg.binarizer)
    return {"l_m": l_m, "l_v": l_v, "l_c": l_c, "total": total_loss(l_m, l_v, l_c, cfg.weights)}


def batch_losses(model, batch, cfg: RunConfig) -> dict:
    acc = None
    for x, y, m in batch:
        parts = clip_losses(model, x, y, m, cfg)
        acc = parts if acc is None else {k: acc[k] + parts[k] for k in acc}
    return {k: v / len(batch) for k, v in acc.items()}


def load_dataset(root) -> list:
    clips = [read_clip(d) for d in list_clips(root)]
    if not clips:
        raise ValidationError(f"no clips found under {root}")
    return clips


def sample_batch(clips, cfg: RunConfig, rng: np.random.Generator, dtype=torch.float32):
    order = rng.permutation(len(clips))
    picks = [order[i % len(order)] for i in range(cfg.batch_clips)]
    batch = []
    for k in picks:
        c = clips[k]
        t, h, w = c.m.shape[:3]
        if t < cfg.frames or h < cfg.crop_h or w < cfg.crop_w:
            raise DimensionError(f"clip {k} ({t}x{h}x{w}) smaller than the training crop")
        t0 = int(rng.integers(t - cfg.frames + 1))
        i0 = int(rng.integers(h - cfg.crop_h + 1))
        j0 = int(rng.integers(w - cfg.crop_w + 1))
        sl = (slice(t0, t0 + cfg.frames), slice(i0, i0 + cfg.crop_h), slice(j0, j0 + cfg.crop_w))
        batch.append(tuple(torch.as_tensor(a[sl], dtype=dtype) for a in (c.x, c.y, c.m)))
    return batch


def full_batch(clips, cfg: RunConfig, dtype=torch.float32):
    """Every clip, first ``frames`` frames, top-left crop: a fixed evaluation batch."""
    sl = (slice(0, cfg.frames), slice(0, cfg.crop_h), slice(0, cfg.crop_w))
    return [tuple(torch.as_tensor(a[sl], dtype=dtype) for a in (c.x, c.y, c.m)) for c in clips]


@torch.no_grad()
def evaluate_objective(model, clips, cfg: RunConfig) -> dict:
    parts = batch_losses(model, full_batch(clips, cfg), cfg)
    return {k: float(v) for k, v in parts.items()}


# ---------------------------------------------------------------- checkpoints


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def make_checkpoint(model, optimizer, step, rng, cfg: RunConfig) -> ckpt_io.Checkpoint:
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    names = {id(p): n for n, p in model.named_parameters()}
    for group in optimizer.param_groups:
        for p in group["params"]:
            for key, val in optimizer.state.get(p, {}).items():
                tensors[f"adam/{names[id(p)]}/{key}"] = val
    return ckpt_io.Checkpoint(tensors, asdict(cfg), step, _rng_state(rng))


def restore(model, optimizer, ckpt: ckpt_io.Checkpoint):
    """Load parameters (and optimizer moments when ``optimizer`` is given)."""
    state = {k[len("model/"):]: torch.from_numpy(v) for k, v in ckpt.tensors.items() if k.startswith("model/")}
    model.load_state_dict(state)
    if optimizer is None:
        return
    params = dict(model.named_parameters())
    for key, val in ckpt.tensors.items():
        if not key.startswith("adam/"):
            continue
        name, slot = key[len("adam/"):].rsplit("/", 1)
        optimizer.state[params[name]][slot] = torch.from_numpy(val)


def load_model(path, **overrides) -> BVINet:
    ckpt = ckpt_io.load(path)
    cfg = RunConfig(**{**ckpt.config, **overrides})
    model = BVINet(cfg)
    restore(model, None, ckpt)
    return model


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: BVINet
    trace: list = field(default_factory=list)
    checkpoint: Path | None = None


def _trace_line(rec):
    return f"{rec['step']} {rec['l_m']!r} {rec['l_v']!r} {rec['l_c']!r} {rec['total']!r}\n"


def read_trace(path) -> list:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or not line.strip():
            continue
        step, l_m, l_v, l_c, total = line.split()
        out.append({"step": int(step), "l_m": float(l_m), "l_v": float(l_v), "l_c": float(l_c), "total": float(total)})
    return out


def train(cfg: RunConfig, data, out_dir=None, resume=None, clips=None, progress=None) -> TrainResult:
    """Minimise the weighted objective with Adam.

    ``data`` is a dataset directory (or None when ``clips`` is given). With
    ``out_dir`` set, the per-step trace goes to ``trace.log`` and a checkpoint
    is written every ``checkpoint_every`` steps and at the end. ``resume``
    continues from a checkpoint, including optimizer moments and sampler state.
    """
    clips = clips if clips is not None else load_dataset(data)
    model = build_model(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    start = 0
    if resume is not None:
        ck = ckpt_io.load(resume)
        restore(model, optimizer, ck)
        rng = _restore_rng(ck.rng)
        start = ck.step

    out = Path(out_dir) if out_dir is not None else None
    trace_fh = None
    ckpt_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / CHECKPOINT_NAME
        trace_path = out / TRACE_NAME
        fresh = resume is None or not trace_path.exists()
        trace_fh = open(trace_path, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            trace_fh.write("# step l_m l_v l_c total\n")
            if cfg.lambda_c == 0:
                trace_fh.write("# lambda_c = 0: l_c is monitored only\n")

    trace = []
    try:
        for step in range(start + 1, cfg.steps + 1):
            batch = sample_batch(clips, cfg, rng)
            # a non-finite loss raises TrainingAborted here; the last periodic checkpoint stays as is
            parts = batch_losses(model, batch, cfg)
            optimizer.zero_grad(set_to_none=True)
            parts["total"].backward()
            optimizer.step()
            rec = {"step": step, **{k: float(v.detach()) for k, v in parts.items()}}
            trace.append(rec)
            if trace_fh is not None:
                trace_fh.write(_trace_line(rec))
            if progress is not None:
                progress(rec)
            if ckpt_path is not None and (step % cfg.checkpoint_every == 0 or step == cfg.steps):
                trace_fh.flush()
                ckpt_io.save(ckpt_path, make_checkpoint(model, optimizer, step, rng, cfg))
    finally:
        if trace_fh is not None:
            trace_fh.close()
    return TrainResult(model, trace, ckpt_path)


def clips_from_arrays(triples) -> list:
    """Wrap ``(x, y, m)`` arrays as :class:`ClipTriple` for in-memory training."""
    return [t if isinstance(t, ClipTriple) else ClipTriple(t[0], t[1], t[2], 0) for t in triples]
