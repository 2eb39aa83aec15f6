"""Training, inference and evaluation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import contrast
from .config import RunConfig, config_from_dict
from .dataset_io import DatasetIndex, load_image, load_mask, write_report
from .errors import SGSFError, ValidationError
from .forge import mix_batch
from .losses import LossValue, focal_loss, l2_loss, loss_value, ssim_loss, total_loss
from .nets import NetConfig, SegNet, SelfNet, init_weights, to_tensor
from .saliency import load_saliency
from .scoring_metrics import MetricsReport, ScoredResult, build_report, smooth_and_score

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DTYPE = torch.float32


class TrainingError(SGSFError, RuntimeError):
    pass


def lr_schedule(epoch: int, cfg: RunConfig) -> float:
    """Step decay by 0.1 at ceil(E * m) for each milestone fraction m."""
    E = cfg.total_epochs
    passed = sum(epoch >= math.ceil(E * m) for m in cfg.decay_milestones)
    return cfg.lr * 0.1 ** passed


def net_config(cfg: RunConfig) -> NetConfig:
    return NetConfig(in_channels=cfg.channels, base_channels=cfg.base_channels, depth=4)


@dataclass
class TrainState:
    cfg: RunConfig
    self_net: SelfNet
    seg_net: SegNet
    optimizer: torch.optim.Optimizer
    epoch: int = 0  # next epoch to run
    history: list = field(default_factory=list)
    stems: list = field(default_factory=list)
    paths: list = field(default_factory=list)
    index: contrast.ContrastIndex | None = None

    def eval(self):
        self.self_net.eval()
        self.seg_net.eval()

    def train(self):
        self.self_net.train()
        self.seg_net.train()


def new_state(cfg: RunConfig, stems=(), paths=()) -> TrainState:
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    ncfg = net_config(cfg)
    self_net, seg_net = SelfNet(ncfg).to(DTYPE), SegNet(ncfg).to(DTYPE)
    init_weights(self_net, rng)
    init_weights(seg_net, rng)
    params = list(self_net.parameters()) + list(seg_net.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    return TrainState(cfg, self_net, seg_net, opt, stems=list(stems), paths=list(paths))


def embed_images(self_net: SelfNet, images: np.ndarray, batch: int = 32) -> np.ndarray:
    """Mean-pooled deepest self-net encoder features, one row per image."""
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            deepest = self_net.encode(to_tensor(images[i:i + batch], DTYPE))[-1]
            out.append(deepest.mean(dim=(2, 3)).double().numpy())
    return np.concatenate(out)


def refresh_index(state: TrainState, images: np.ndarray) -> contrast.ContrastIndex:
    state.self_net.eval()
    vecs = embed_images(state.self_net, images)
    state.self_net.train()
    version = state.index.version + 1 if state.index is not None else 1
    state.index = contrast.ContrastIndex(list(state.stems), vecs, state.cfg.fingerprint(), version)
    return state.index


def train_step(state: TrainState, seg_images: np.ndarray, labels: np.ndarray,
               self_inputs: np.ndarray, self_targets: np.ndarray,
               stems: list[str] | None = None) -> LossValue:
    """One joint Adam update of both networks on a batch.

    ``self_inputs``/``self_targets`` are the contrast images (reconstruction)
    or the forged images / their clean sources (denoising).
    """
    cfg = state.cfg
    x = to_tensor(seg_images, DTYPE)
    y = torch.from_numpy(np.asarray(labels, dtype=np.float32))[:, None]
    s_in, s_tgt = to_tensor(self_inputs, DTYPE), to_tensor(self_targets, DTYPE)

    recon, _, C_D = state.self_net(s_in)
    O, _, _ = state.seg_net(x, C_D)
    l2 = l2_loss(s_tgt, recon)
    ssim = ssim_loss(s_tgt, recon, cfg.ssim_window)
    focal = focal_loss(O, y, cfg.tau)
    total = total_loss(l2 + ssim, focal, cfg.lam)
    if not torch.isfinite(total):
        raise TrainingError(
            f"non-finite loss at epoch {state.epoch} (seed {cfg.seed}); batch stems: {stems}"
        )
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    return loss_value(l2.item(), ssim.item(), focal.item(), cfg.lam)


@dataclass
class TrainData:
    """In-memory training inputs."""

    stems: list[str]
    paths: list[str]
    images: np.ndarray  # (m, N, N, C)
    saliency: list[np.ndarray]
    aux: list[np.ndarray]


def prepare_data(index: DatasetIndex, cfg: RunConfig, saliency_dir=None) -> TrainData:
    if not index.train_normals:
        raise ValidationError("no training images found")
    if not index.aux_textures:
        raise ValidationError("auxiliary texture pool is empty (pass --aux-dir)")
    if len(index.train_normals) < 2:
        raise ValidationError("need at least two training images for a contrast set")
    stems = [p.stem for p in index.train_normals]
    if len(set(stems)) != len(stems):
        raise ValidationError("training image stems must be unique")
    images = np.stack([load_image(p, cfg.N, cfg.channels) for p in index.train_normals])
    sal = [load_saliency(saliency_dir, s, cfg.N, img) for s, img in zip(stems, images)]
    aux = [load_image(p, cfg.N, cfg.channels) for p in index.aux_textures]
    return TrainData(stems, [str(p) for p in index.train_normals], images, sal, aux)


def warmup_epochs(cfg: RunConfig) -> int:
    return max(1, math.ceil(cfg.total_epochs * cfg.warmup_fraction))


def refresh_every(cfg: RunConfig) -> int:
    return max(1, math.ceil(cfg.total_epochs * cfg.refresh_fraction))


def _guidance_sources(state: TrainState, data: TrainData, sources: list[int],
                      rng: np.random.Generator) -> list[int]:
    """Index of the contrast image used as self-net input for each item."""
    cfg = state.cfg
    m = len(data.stems)
    out = []
    for i in sources:
        if state.index is None:
            j = int(rng.integers(m - 1))
            out.append(j + (j >= i))
            continue
        stem = data.stems[i]
        cset = contrast.query(state.index, stem, state.index.vector(stem), cfg.n_contrast, "train")
        out.append(data.stems.index(contrast.sample_guidance(cset, rng, "train")))
    return out


def run_epoch(state: TrainState, data: TrainData) -> dict:
    cfg = state.cfg
    e = state.epoch
    for group in state.optimizer.param_groups:
        group["lr"] = lr_schedule(e, cfg)
    if cfg.self_task == "reconstruction":
        w = warmup_epochs(cfg)
        if e >= w and (e - w) % refresh_every(cfg) == 0:
            refresh_index(state, data.images)
    rng = np.random.default_rng([cfg.seed, e])
    order = rng.permutation(len(data.stems))
    items = mix_batch(
        [data.images[i] for i in order], cfg, rng,
        saliency=[data.saliency[i] for i in order], aux_pool=data.aux,
        stems=[data.stems[i] for i in order],
    )
    sums = {"total": 0.0, "l2": 0.0, "ssim": 0.0, "focal": 0.0}
    steps = 0
    for b in range(0, len(items), cfg.batch_size):
        chunk = items[b:b + cfg.batch_size]
        sources = [int(order[it.source]) for it in chunk]
        seg_x = np.stack([it.image for it in chunk])
        labels = np.stack([it.label for it in chunk])
        if cfg.self_task == "reconstruction":
            guide = data.images[_guidance_sources(state, data, sources, rng)]
            s_in, s_tgt = guide, guide
        else:
            s_in, s_tgt = seg_x, data.images[sources]
        lv = train_step(state, seg_x, labels, s_in, s_tgt, [data.stems[i] for i in sources])
        sums["total"] += lv.total
        for k, v in lv.components.items():
            sums[k] += v
        steps += 1
    stats = {k: v / steps for k, v in sums.items()}
    stats.update(epoch=e, lr=lr_schedule(e, cfg),
                 forged=sum(it.is_forged for it in items), items=len(items))
    state.history.append(stats)
    state.epoch += 1
    return stats


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    idx = state.index
    blob = {
        "version": CHECKPOINT_VERSION,
        "run_config": state.cfg.to_dict(),
        "net_config": net_config(state.cfg).to_dict(),
        "fingerprint": state.cfg.fingerprint(),
        "self_net": state.self_net.state_dict(),
        "seg_net": state.seg_net.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "epoch": state.epoch,
        "history": state.history,
        "stems": state.stems,
        "paths": state.paths,
        "index": None if idx is None else {
            "stems": idx.stems, "vectors": torch.from_numpy(idx.vectors.copy()),
            "version": idx.version,
        },
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    if idx is not None:
        idx.save(path.with_suffix(".cidx"))
    return path


def load_checkpoint(path: str | Path) -> TrainState:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise SGSFError(f"{path}: cannot read checkpoint ({exc})") from exc
    if blob.get("version") != CHECKPOINT_VERSION:
        raise SGSFError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    cfg = config_from_dict(blob["run_config"])
    state = new_state(cfg, blob["stems"], blob["paths"])
    state.self_net.load_state_dict(blob["self_net"])
    state.seg_net.load_state_dict(blob["seg_net"])
    state.optimizer.load_state_dict(blob["optimizer"])
    state.epoch = blob["epoch"]
    state.history = list(blob["history"])
    if blob["index"] is not None:
        ix = blob["index"]
        state.index = contrast.ContrastIndex(
            list(ix["stems"]), ix["vectors"].numpy(), blob["fingerprint"], ix["version"])
    return state


def train(index: DatasetIndex, cfg: RunConfig, out_dir: str | Path, saliency_dir=None,
          resume: str | Path | None = None, stop_after: int | None = None,
          data: TrainData | None = None) -> Path:
    """Full training loop; returns the final checkpoint path.

    ``stop_after`` ends the run early after that many epochs (for resumption tests).
    """
    out_dir = Path(out_dir)
    data = data or prepare_data(index, cfg, saliency_dir)
    if resume is not None:
        state = load_checkpoint(resume)
        if state.cfg.fingerprint() != cfg.fingerprint():
            log.warning("resuming with the checkpoint's config, ignoring the one passed in")
    else:
        state = new_state(cfg, data.stems, data.paths)
    state.train()
    ckpt = out_dir / "checkpoint.pt"
    done = 0
    while state.epoch < state.cfg.total_epochs:
        t0 = time.perf_counter()
        stats = run_epoch(state, data)
        log.info("epoch %d lr %.1e total %.4f l2 %.4f ssim %.4f focal %.4f (%.1fs)",
                 stats["epoch"], stats["lr"], stats["total"], stats["l2"], stats["ssim"],
                 stats["focal"], time.perf_counter() - t0)
        done += 1
        if state.epoch % state.cfg.checkpoint_every == 0:
            save_checkpoint(state, ckpt)
        if stop_after is not None and done >= stop_after:
            break
    finished = state.epoch >= state.cfg.total_epochs
    if finished and state.cfg.self_task == "reconstruction":
        refresh_index(state, data.images)
    save_checkpoint(state, ckpt)
    return ckpt


class Detector:
    """Inference wrapper around a loaded checkpoint."""

    def __init__(self, state: TrainState):
        self.state = state
        self.cfg = state.cfg
        state.eval()
        if self.cfg.self_task == "reconstruction" and (state.index is None or state.index.m == 0):
            raise SGSFError("checkpoint has no contrast index; run build-contrast or retrain")
        self._guidance: dict[str, list[torch.Tensor]] = {}
        self._stem_path = dict(zip(state.stems, state.paths))

    @classmethod
    def from_checkpoint(cls, path) -> "Detector":
        return cls(load_checkpoint(path))

    def guidance_for(self, stem: str) -> list[torch.Tensor]:
        if stem not in self._guidance:
            path = self._stem_path.get(stem)
            if path is None or not Path(path).is_file():
                raise SGSFError(f"guidance image for '{stem}' not found ({path}); "
                                "check that the training data is still in place")
            img = load_image(path, self.cfg.N, self.cfg.channels)
            with torch.no_grad():
                self._guidance[stem] = self.state.self_net(to_tensor(img, DTYPE))[2]
        return self._guidance[stem]

    def anomaly_map(self, img: np.ndarray) -> tuple[np.ndarray, str]:
        x = to_tensor(img, DTYPE)
        with torch.no_grad():
            if self.cfg.self_task == "denoising":
                guide, stem = self.state.self_net(x)[2], ""
            else:
                q = embed_images(self.state.self_net, np.asarray(img)[None])[0]
                cset = contrast.query(self.state.index, None, q, 1, "test")
                stem = contrast.sample_guidance(cset, None, "test")
                guide = self.guidance_for(stem)
            O = self.state.seg_net(x, guide)[0]
        return O[0, 0].double().numpy(), stem

    def score_image(self, img: np.ndarray, stem: str = "", image_label: int = 0,
                    pixel_labels=None) -> ScoredResult:
        O, guide = self.anomaly_map(img)
        smoothed, score = smooth_and_score(O, self.cfg.smoothing_window)
        return ScoredResult(O, score, stem, image_label, pixel_labels,
                            self.cfg.smoothing_window, smoothed, guide)


def infer(checkpoint, image_path, cfg: RunConfig | None = None) -> ScoredResult:
    det = Detector.from_checkpoint(checkpoint)
    img = load_image(image_path, det.cfg.N, det.cfg.channels)
    return det.score_image(img, Path(image_path).stem)


def score_dataset(det: Detector, index: DatasetIndex) -> list[ScoredResult]:
    results = []
    for item in index.test_items:
        img = load_image(item.image, det.cfg.N, det.cfg.channels)
        if item.label == 0:
            px = np.zeros((det.cfg.N, det.cfg.N), dtype=np.float32)
        elif item.mask is not None:
            px = load_mask(item.mask, det.cfg.N)
        else:
            px = None
        results.append(det.score_image(img, item.image.stem, item.label, px))
    return results


def evaluate(checkpoint, index: DatasetIndex, cfg: RunConfig | None = None,
             report_path=None, detector: Detector | None = None) -> MetricsReport:
    if not index.test_items:
        raise ValidationError("dataset has no test items to evaluate")
    det = detector or Detector.from_checkpoint(checkpoint)
    results = score_dataset(det, index)
    report = build_report(results, det.cfg.fingerprint())
    if report_path is not None:
        write_report(report, report_path)
    return report


def build_contrast(checkpoint, index: DatasetIndex, out=None) -> contrast.ContrastIndex:
    """Re-embed the training normals with the checkpoint's self net and store the index."""
    state = load_checkpoint(checkpoint)
    images = np.stack([load_image(p, state.cfg.N, state.cfg.channels) for p in index.train_normals])
    state.stems = [p.stem for p in index.train_normals]
    state.paths = [str(p) for p in index.train_normals]
    state.self_net.eval()
    idx = refresh_index(state, images)
    save_checkpoint(state, out or checkpoint)
    return idx
