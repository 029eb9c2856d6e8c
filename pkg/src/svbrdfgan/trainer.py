"""Adversarial training with the diffuse prior, the 5:1 decoder schedule and two-stage training."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import brdf
from .brdf import SvbrdfMaps
from .config import TrainConfig
from .imaging import LinearImage, sample_training_patch
from .models import Discriminator, Generator, load_checkpoint, save_checkpoint
from .nn import SGD, Adam, Tensor, bce, l1, no_grad
from .render_op import hwc, nchw, raw_diffuse, render_raw

log = logging.getLogger(__name__)

LOG_HEADER = ("iteration", "d_loss", "g_adv", "g_diffuse", "seconds")


class NonFiniteLossError(FloatingPointError):
    """A loss became NaN or infinite; the offending iteration was dumped to disk."""


@dataclass
class LossRecord:
    iteration: int
    d_loss: float
    g_adv: float
    g_diffuse: float
    seconds: float

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.d_loss, self.g_adv, self.g_diffuse))


@dataclass
class TrainLog:
    records: list[LossRecord] = field(default_factory=list)

    def append(self, rec: LossRecord) -> None:
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_HEADER)
            for r in self.records:
                w.writerow([r.iteration, repr(r.d_loss), repr(r.g_adv), repr(r.g_diffuse), f"{r.seconds:.3f}"])

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([LossRecord(int(r["iteration"]), float(r["d_loss"]), float(r["g_adv"]),
                               float(r["g_diffuse"]), float(r["seconds"])) for r in rows])


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: TrainLog
    checkpoint: Path | None = None


class Trainer:
    """Owns the networks, the three optimisers and the iteration counter.

    Parameter groups: discriminator; encoder + normal/roughness decoder
    (``nr``, ``nr_steps`` updates per iteration); diffuse/specular decoder
    (``pdp``, ``pdp_steps`` updates per iteration).
    """

    def __init__(self, cfg: TrainConfig, g: Generator | None = None, d: Discriminator | None = None):
        self.cfg = cfg
        self.g = g if g is not None else Generator(cfg.base_channels, cfg.seed)
        self.d = d if d is not None else Discriminator(cfg.base_channels, cfg.seed)
        self.nr_params = self.g.encoder.parameters() + self.g.dec_nr.parameters()
        self.pdp_params = self.g.dec_pdp.parameters()
        self.d_params = self.d.parameters()
        self.opt_d = self._optimizer(self.d_params, cfg.discriminator_lr)
        self.opt_nr = self._optimizer(self.nr_params, cfg.lr)
        self.opt_pdp = self._optimizer(self.pdp_params, cfg.lr)
        self.iteration = 0
        self.step_hook: Callable[[str], None] | None = None

    def _optimizer(self, params, lr):
        if self.cfg.optimizer == "sgd":
            return SGD(params, lr)
        return Adam(params, lr, betas=(self.cfg.adam_beta1, self.cfg.adam_beta2))

    def _only(self, group: Sequence[Tensor]) -> None:
        ids = {id(p) for p in group}
        for p in self.g.parameters() + self.d_params:
            p.requires_grad = id(p) in ids
            p.grad = None

    def _generator_loss(self, x: Tensor, target: Tensor, omega: np.ndarray):
        raw = self.g(x)
        fake = render_raw(raw, omega, self.cfg.intensity)
        g_adv = bce(self.d(fake), 1.0)
        g_diff = l1(raw_diffuse(raw), target)
        loss = g_adv + g_diff * self.cfg.lambda_diffuse if self.cfg.lambda_diffuse != 0 else g_adv
        return loss, g_adv, g_diff

    def train_iteration(self, photos: Sequence[LinearImage], guessed_diffuse: LinearImage,
                        rng: np.random.Generator | None = None) -> LossRecord:
        cfg = self.cfg
        t0 = time.perf_counter()
        it = self.iteration + 1
        rng = rng if rng is not None else np.random.default_rng([cfg.seed, it])
        sample = sample_training_patch(photos, guessed_diffuse, cfg.patch_size, rng)
        s = cfg.patch_size
        full = (guessed_diffuse.width, guessed_diffuse.height)
        omega = brdf.direction_field(s, s, cfg.camera_height, sample.origin, full,
                                     mode=cfg.direction_mode).omega[None]
        x = Tensor(nchw(sample.photo_patch.data))
        target = Tensor(nchw(sample.diffuse_patch.data))

        # discriminator: real photo patches vs renders of the current maps
        with no_grad():
            fake = render_raw(self.g(x), omega, cfg.intensity)
        self._only(self.d_params)
        d_loss = bce(self.d(x), 1.0) + bce(self.d(fake), 0.0)
        d_loss.backward()
        self.opt_d.step()
        self._after("d")

        g_adv_first = g_diff_first = None
        for kind, group, opt, steps in (("nr", self.nr_params, self.opt_nr, cfg.nr_steps),
                                        ("pdp", self.pdp_params, self.opt_pdp, cfg.pdp_steps)):
            for _ in range(steps):
                self._only(group)
                loss, g_adv, g_diff = self._generator_loss(x, target, omega)
                if g_adv_first is None:
                    g_adv_first, g_diff_first = g_adv.item(), g_diff.item()
                if not np.isfinite(loss.item()):
                    self._dump_and_raise(it, sample, d_loss.item(), g_adv.item(), g_diff.item())
                loss.backward()
                opt.step()
                self._after(kind)

        self._release()
        rec = LossRecord(it, d_loss.item(), g_adv_first, g_diff_first, time.perf_counter() - t0)
        if not rec.is_finite():
            self._dump_and_raise(it, sample, rec.d_loss, rec.g_adv, rec.g_diffuse)
        self.iteration = it
        return rec

    def _release(self) -> None:
        for p in self.g.parameters() + self.d_params:
            p.requires_grad = True
            p.grad = None

    def _after(self, kind: str) -> None:
        if self.step_hook is not None:
            self.step_hook(kind)

    def _dump_and_raise(self, it, sample, d_loss, g_adv, g_diff):
        out_dir = Path(self.cfg.checkpoint_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        dump = out_dir / f"nonfinite_iter{it}.npz"
        np.savez(dump, photo_patch=sample.photo_patch.data, diffuse_patch=sample.diffuse_patch.data,
                 origin=np.array(sample.origin), losses=np.array([d_loss, g_adv, g_diff]))
        raise NonFiniteLossError(
            f"non-finite loss at iteration {it} (d={d_loss}, g_adv={g_adv}, g_diffuse={g_diff}); "
            f"patch dumped to {dump}")

    # -- resumable state ---------------------------------------------------------

    def save_state(self, path: str | Path, log_records: Sequence[LossRecord] = ()) -> None:
        extra = {}
        for name, opt in (("opt_d", self.opt_d), ("opt_nr", self.opt_nr), ("opt_pdp", self.opt_pdp)):
            extra.update({f"{name}.{k}": v for k, v in opt.state_arrays().items()})
        # wall time stays out so that state files are byte-reproducible
        state = {"iteration": self.iteration, "seed": self.cfg.seed,
                 "log": [[r.iteration, r.d_loss, r.g_adv, r.g_diffuse] for r in log_records]}
        save_checkpoint(self.g, self.d, path, extra=extra, state=state)

    @classmethod
    def from_state(cls, cfg: TrainConfig, path: str | Path) -> tuple["Trainer", list[LossRecord]]:
        g, d, extra, state = load_checkpoint(path, with_extra=True)
        tr = cls(cfg, g, d)
        for name, opt in (("opt_d", tr.opt_d), ("opt_nr", tr.opt_nr), ("opt_pdp", tr.opt_pdp)):
            arrays = {k[len(name) + 1:]: v for k, v in extra.items() if k.startswith(name + ".")}
            if arrays:
                opt.load_state_arrays(arrays)
        state = state or {}
        tr.iteration = int(state.get("iteration", 0))
        records = [LossRecord(int(r[0]), *map(float, r[1:4]), float("nan")) for r in state.get("log", [])]
        return tr, records


def _check_arch(cfg: TrainConfig, g: Generator) -> None:
    if g.base_channels != cfg.base_channels:
        raise ValueError(f"checkpoint architecture has base_channels={g.base_channels}, "
                         f"config asks for {cfg.base_channels}")


def train(cfg: TrainConfig, photos: Sequence[LinearImage], guessed_diffuse: LinearImage,
          init_checkpoint: str | Path | None = None, out_path: str | Path | None = None,
          iterations: int | None = None, resume_from: str | Path | None = None,
          stop_after: int | None = None) -> TrainResult:
    """Run the adversarial loop.

    Runs ``iterations_stage2`` iterations when starting from ``init_checkpoint``
    and ``iterations_single_stage`` otherwise, unless ``iterations`` is given.
    ``resume_from`` continues a run from a periodic state file;
    ``stop_after`` ends the run early (used to simulate interruption).
    """
    if iterations is None:
        iterations = cfg.iterations_stage2 if init_checkpoint is not None else cfg.iterations_single_stage
    if resume_from is not None:
        trainer, records = Trainer.from_state(cfg, resume_from)
        _check_arch(cfg, trainer.g)
    elif init_checkpoint is not None:
        g, d = load_checkpoint(init_checkpoint)
        _check_arch(cfg, g)
        trainer, records = Trainer(cfg, g, d), []
    else:
        trainer, records = Trainer(cfg), []

    tlog = TrainLog(list(records))
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    while trainer.iteration < iterations:
        if stop_after is not None and trainer.iteration >= stop_after:
            break
        rec = trainer.train_iteration(photos, guessed_diffuse)
        if rec.iteration == 1 or rec.iteration % cfg.log_every == 0 or rec.iteration == iterations:
            tlog.append(rec)
            log.info("iter %d  d=%.4f  g_adv=%.4f  g_diffuse=%.4f  (%.2fs)", rec.iteration, rec.d_loss,
                     rec.g_adv, rec.g_diffuse, rec.seconds)
        if ckpt_dir is not None and cfg.checkpoint_every > 0 and rec.iteration % cfg.checkpoint_every == 0:
            trainer.save_state(ckpt_dir / "resume.ckpt", tlog.records)

    if cfg.log_path:
        tlog.write_csv(cfg.log_path)
    path = None
    if out_path is not None:
        path = Path(out_path)
        save_checkpoint(trainer.g, trainer.d, path)
    return TrainResult(trainer.g, trainer.d, tlog, path)


def pretrain_stage(cfg: TrainConfig, proxy_photo: LinearImage, out_path: str | Path | None = None) -> TrainResult:
    """First stage: train on one proxy image, which is its own diffuse prior."""
    proxy = proxy_photo.to_rgb()
    return train(cfg, [proxy], proxy, out_path=out_path, iterations=cfg.iterations_stage1)


@dataclass
class Estimate:
    maps: SvbrdfMaps
    rerender: LinearImage


def estimate(checkpoint: str | Path | Generator, photo: LinearImage, intensity: float = brdf.DEFAULT_INTENSITY,
             camera_height: float = 1.0, direction_mode: str = "point",
             guessed_diffuse: LinearImage | None = None) -> Estimate:
    """Full-resolution generator pass, decoding, and a re-render of the result.

    With ``guessed_diffuse`` the re-render uses that map in place of the
    generated diffuse.
    """
    if photo.width % 8 or photo.height % 8:
        raise ValueError(f"photo size {photo.width}x{photo.height}: both dimensions must be multiples of 8")
    g = checkpoint if isinstance(checkpoint, Generator) else load_checkpoint(checkpoint)[0]
    x = Tensor(nchw(photo.to_rgb().data))
    with no_grad():
        raw = g(x)
    maps = brdf.decode_maps(hwc(raw.data))
    field = brdf.direction_field(photo.width, photo.height, camera_height, mode=direction_mode)
    shown = maps
    if guessed_diffuse is not None:
        shown = SvbrdfMaps(maps.normal, np.clip(guessed_diffuse.to_rgb().data, 0, 1), maps.specular,
                           maps.roughness)
    return Estimate(maps, brdf.render(shown, field, intensity))


def diffuse_l1(g: Generator, photo: LinearImage, guessed_diffuse: LinearImage) -> float:
    """Full-image L1 between the generated diffuse map and the guessed one.

    Unlike the per-iteration log, which sees a fresh random patch each time,
    this is a fixed evaluation and so can be compared across iterations.
    """
    x = Tensor(nchw(photo.to_rgb().data))
    with no_grad():
        diff = raw_diffuse(g(x)).data
    return float(np.abs(diff - nchw(guessed_diffuse.to_rgb().data)).mean())
