"""Compression loop: per batch, run the frozen teacher and the masked
student, compose objectives per the active strategy, update the student
(and the discriminator unless it is fixed), and advance the sparsity
schedule.

Update order within one step: optional mask rebuild, discriminator phase
(standard loss on real samples vs detached student fakes), generator phase
(term vectors for all active paths, composed objective, one optimizer step),
then mask reapplication so pruned positions are exactly zero.  Teacher term
values are recomputed every batch and detached; the teacher's parameters
never change.
"""

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import models
from .checkpoint import Checkpoint, load_checkpoint, load_model_parameters, model_parameters, save_checkpoint
from .config import ExperimentManifest
from .data import load_dataset
from .errors import ConfigError, NumericError, ValidationError
from .losses import ConsistencyWeights, assert_finite_terms
from .pruning import Granularity, PruningMask, build_mask, compute_group_scores
from .report import MetricsLog
from .schedule import SparsitySchedule
from .strategies import (
    EXTRA_INTERMEDIATE,
    EXTRA_OUTPUT,
    StrategyConfig,
    discriminator_objective,
    generator_objective,
    resolve_strategy,
)

log = logging.getLogger(__name__)


@dataclass
class StepReport:
    step: int
    losses: dict              # flat scalar name -> float
    sparsity_target: float
    sparsity_realized: float
    lr: float
    wall_time: float


@dataclass
class CompressionResult:
    out_dir: Path
    final_checkpoint: Path
    metrics_log: Path
    steps_run: int


class MaskManager:
    """Per-layer pruning masks for one model's conv/deconv/linear weights.

    Scoring and grouping happen in a canonical (out-channels first) 4-D view;
    transposed-conv weights are flipped into that view and masks flipped back,
    so stored masks always match the parameter layout.  Biases and
    normalization parameters are never pruned.
    """

    def __init__(self, model: nn.Module, granularity: Granularity):
        self.granularity = granularity
        self.entries = []  # (param name, weight tensor, transposed)
        for mod_name, module in model.named_modules():
            if isinstance(module, nn.ConvTranspose2d):
                self.entries.append((f"{mod_name}.weight", module.weight, True))
            elif isinstance(module, (nn.Conv2d, nn.Linear)):
                self.entries.append((f"{mod_name}.weight", module.weight, False))
        if not self.entries:
            raise ValidationError("model has no prunable weight tensors")
        self.masks = {}  # param name -> PruningMask (parameter layout)

    def _canonical(self, weight: torch.Tensor, transposed: bool) -> torch.Tensor:
        w = weight.detach()
        if transposed:
            w = w.transpose(0, 1)
        if w.dim() == 2:
            w = w.reshape(*w.shape, 1, 1)
        return w.contiguous()

    def rebuild(self, sparsity: float) -> None:
        """Recompute all masks from current weight magnitudes, then apply them."""
        for name, weight, transposed in self.entries:
            canon = self._canonical(weight, transposed)
            scores = compute_group_scores(canon, self.granularity, layer_id=name)
            canon_mask = build_mask(scores, self.granularity, sparsity, tuple(canon.shape))
            bits = canon_mask.bits
            if weight.dim() == 2:
                bits = bits.reshape(bits.shape[0], bits.shape[1])
            if transposed:
                bits = bits.transpose(0, 1)
            self.masks[name] = PruningMask(
                bits=bits.contiguous(), granularity=self.granularity,
                sparsity=canon_mask.sparsity,
            )
        self.apply()

    def apply(self) -> None:
        with torch.no_grad():
            for name, weight, _ in self.entries:
                if name in self.masks:
                    weight.mul_(self.masks[name].bits.to(weight.dtype))

    def load(self, masks: dict) -> None:
        for name, weight, _ in self.entries:
            if name in masks:
                if tuple(masks[name].bits.shape) != tuple(weight.shape):
                    raise ValidationError(f"mask/parameter shape conflict for '{name}'")
                self.masks[name] = masks[name]
        self.apply()

    def realized_sparsity(self) -> float:
        if not self.masks:
            return 0.0
        zeros = sum(int(m.bits.numel() - m.bits.sum().item()) for m in self.masks.values())
        total = sum(m.bits.numel() for m in self.masks.values())
        return zeros / total

    def max_abs_masked(self) -> float:
        """Largest |weight| at a masked position (0.0 when masks are respected)."""
        worst = 0.0
        with torch.no_grad():
            for name, weight, _ in self.entries:
                if name in self.masks:
                    bits = self.masks[name].bits
                    if bool((~bits).any()):
                        worst = max(worst, float(weight[~bits].abs().max()))
        return worst


def parameter_checksum(model: nn.Module) -> str:
    """sha256 over all named parameters, in name order."""
    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _freeze_teacher(model: nn.Module) -> None:
    """Teacher stays in train mode (batch-stat normalization, matching the
    student) but never updates: grads off, running-stat momentum zeroed."""
    model.train()
    for p in model.parameters():
        p.requires_grad_(False)
    for m in model.modules():
        if isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            m.momentum = 0.0


def _scalar(value) -> float:
    if hasattr(value, "detach"):
        value = value.detach()
    return float(value)


def _detach_terms(terms: dict) -> dict:
    return {k: _scalar(v) for k, v in terms.items()}


class CompressionSession:
    """All live state for one compression run."""

    def __init__(self, manifest: ExperimentManifest, total_steps: int, *,
                 strategy: StrategyConfig, spec, teacher, student, disc,
                 schedule, weights, dataset, batch_size, lr):
        self.manifest = manifest
        self.total_steps = total_steps
        self.strategy = strategy
        self.spec = spec
        self.teacher = teacher
        self.student = student
        self.disc = disc
        self.schedule = schedule
        self.weights = weights
        self.dataset = dataset
        self.batch_size = batch_size
        self.lr = lr
        self.step = 0

        self.student.train()
        betas = spec.betas
        self.opt_g = torch.optim.Adam(self.student.parameters(), lr=lr, betas=betas)
        self.opt_d = None
        if disc is not None:
            disc.train()
            if strategy.discriminator_trains:
                self.opt_d = torch.optim.Adam(disc.parameters(), lr=lr, betas=betas)
            else:
                for p in disc.parameters():
                    p.requires_grad_(False)
        if teacher is not None:
            _freeze_teacher(teacher)

        gran = Granularity(manifest.granularity)
        self.g_masks = MaskManager(student, gran) if strategy.student_generator_pruned else None
        self.d_masks = MaskManager(disc, gran) if (strategy.discriminator_pruned and disc is not None) else None
        self.latent_gen = torch.Generator().manual_seed(manifest.seed + 303)

    @classmethod
    def from_manifest(cls, manifest: ExperimentManifest, resume_from: Checkpoint | None = None):
        strategy = resolve_strategy(manifest.recipe)
        spec = models.resolve_task(manifest.task)
        if strategy.width_param_fraction is not None:
            spec = models.scale_task_width(spec, strategy.width_param_fraction)
        batch_size = manifest.batch_size or spec.batch_size
        lr = manifest.lr or spec.lr

        needs_dense = (
            strategy.student_generator_init == "from_dense"
            or strategy.keep_teacher_generator
            or strategy.discriminator_init in ("pretrained", "pretrained_sparse")
        )
        if needs_dense and not manifest.dense_checkpoint:
            raise ConfigError(
                f"recipe '{manifest.recipe}' initializes from dense weights; "
                f"set dense_checkpoint to a baseline training checkpoint"
            )
        dense = None
        if manifest.dense_checkpoint:
            # loaded whenever referenced: from-scratch recipes still use it to
            # derive the default step budget, for like-for-like comparisons
            dense = load_checkpoint(manifest.dense_checkpoint)
            if dense.manifest.get("task") != manifest.task:
                raise ConfigError(
                    f"dense checkpoint was trained on task "
                    f"'{dense.manifest.get('task')}', not '{manifest.task}'"
                )

        dataset = load_dataset(
            spec.dataset, "train", manifest.seed,
            directory=manifest.data_dir, image_shape=spec.image_shape,
        )

        total_steps = manifest.steps
        if total_steps is None and manifest.epochs is not None:
            total_steps = manifest.epochs * dataset.steps_per_epoch(batch_size)
        if total_steps is None:
            if dense is None:
                raise ConfigError("set steps or epochs for runs without a dense checkpoint")
            total_steps = int(manifest.budget_fraction * dense.step)
        if total_steps < 1:
            raise ConfigError(f"resolved step budget is {total_steps}; nothing to run")

        # width scaling never co-occurs with a teacher or from-dense init,
        # so spec.generator_arch is the right arch for every model here
        teacher = None
        if strategy.keep_teacher_generator:
            teacher = models.GeneratorNet(spec.generator_arch, spec.image_shape, spec.latent_dim)
            load_model_parameters(dense.parameters, "generator", teacher)

        student = models.GeneratorNet(spec.generator_arch, spec.image_shape, spec.latent_dim)
        if strategy.student_generator_init == "from_dense":
            load_model_parameters(dense.parameters, "generator", student)
        else:
            models.init_parameters(student, manifest.seed + 101)

        disc = None
        if strategy.has_discriminator:
            disc = models.DiscriminatorNet(spec.discriminator_arch, spec.image_shape)
            if strategy.discriminator_init in ("pretrained", "pretrained_sparse"):
                load_model_parameters(dense.parameters, "discriminator", disc)
            else:
                models.init_parameters(disc, manifest.seed + 202)

        schedule = None
        if strategy.student_generator_pruned:
            if strategy.pruning_regime == "one_shot":
                schedule = SparsitySchedule.one_shot(manifest.sparsity, 0, total_steps)
            else:
                ramp_end = max(1, int(total_steps * manifest.ramp_fraction))
                schedule = SparsitySchedule.gradual(
                    min(manifest.s_initial, manifest.sparsity), manifest.sparsity,
                    0, ramp_end, manifest.update_interval,
                )

        weights = ConsistencyWeights(
            generative_weights=dict(manifest.generative_weights),
            discriminative_weights=dict(manifest.discriminative_weights),
            lam=manifest.lam, epsilon=manifest.epsilon,
        )

        session = cls(
            manifest, total_steps, strategy=strategy, spec=spec, teacher=teacher,
            student=student, disc=disc, schedule=schedule, weights=weights,
            dataset=dataset, batch_size=batch_size, lr=lr,
        )
        if session.d_masks is not None and strategy.discriminator_init == "pretrained_sparse":
            # sparse pretrained discriminator: masked from its dense magnitudes up front
            session.d_masks.rebuild(schedule.sparsity_at(0) if schedule else manifest.sparsity)
        if resume_from is not None:
            load_model_parameters(resume_from.parameters, "generator", session.student)
            if session.disc is not None:
                load_model_parameters(resume_from.parameters, "discriminator", session.disc)
            if session.g_masks is not None:
                session.g_masks.load({k[len("generator."):]: v
                                      for k, v in resume_from.masks.items()
                                      if k.startswith("generator.")})
            if session.d_masks is not None:
                session.d_masks.load({k[len("discriminator."):]: v
                                      for k, v in resume_from.masks.items()
                                      if k.startswith("discriminator.")})
            session.step = resume_from.step
            # latent stream fast-forward keeps resumed draws aligned with the step index
            for _ in range(session.step):
                models.draw_latents(spec, batch_size, session.latent_gen)
        return session

    # ------------------------------------------------------------------
    def to_checkpoint(self, metric_snapshot: dict | None = None) -> Checkpoint:
        params = model_parameters("generator", self.student)
        if self.disc is not None:
            params.update(model_parameters("discriminator", self.disc))
        masks = {}
        if self.g_masks:
            masks.update({f"generator.{k}": v for k, v in self.g_masks.masks.items()})
        if self.d_masks:
            masks.update({f"discriminator.{k}": v for k, v in self.d_masks.masks.items()})
        return Checkpoint(
            manifest=self.manifest.to_dict(),
            parameters=params,
            masks=masks,
            step=self.step,
            metric_snapshot=metric_snapshot or {},
        )


def compression_step(session: CompressionSession, batch: torch.Tensor) -> StepReport:
    """Run one full compression step on one batch of real samples."""
    t0 = time.perf_counter()
    strat = session.strategy
    spec = session.spec
    losses = {}

    # (1) advance the sparsity schedule
    target = 0.0
    if session.g_masks is not None:
        target = session.schedule.sparsity_at(session.step)
        if session.schedule.should_update_mask(session.step):
            session.g_masks.rebuild(target)
            if session.d_masks is not None:
                session.d_masks.rebuild(target)

    real = batch
    if real.shape[0] != session.batch_size:
        raise ValidationError(
            f"batch size {real.shape[0]} != configured {session.batch_size}"
        )
    if tuple(real.shape[1:]) != tuple(spec.image_shape):
        raise ValidationError(
            f"batch sample shape {tuple(real.shape[1:])} != task shape {tuple(spec.image_shape)}"
        )
    z = models.draw_latents(spec, session.batch_size, session.latent_gen)

    # (2) discriminator phase: standard loss against detached student fakes
    if session.opt_d is not None:
        with torch.no_grad():
            fake_for_d = session.student(z)
        d_terms = models.discriminator_terms(session.disc, real, fake_for_d)
        assert_finite_terms(d_terms, "disc_phase.student_disc")
        d_obj = discriminator_objective(strat, {"student_disc": d_terms})
        session.opt_d.zero_grad()
        d_obj.backward()
        session.opt_d.step()
        if session.d_masks is not None:
            session.d_masks.apply()
        losses["disc_objective"] = _scalar(d_obj)

    # (3) generator phase
    needed = strat.required_vectors()
    term_values = {}
    fake_teacher = None
    if strat.keep_teacher_generator:
        with torch.no_grad():
            if strat.extra == EXTRA_INTERMEDIATE:
                fake_teacher, tap_teacher = session.teacher.forward_with_tap(z)
            else:
                fake_teacher = session.teacher(z)
            if "teacher_gen" in needed:
                term_values["teacher_gen"] = _detach_terms(
                    models.generator_terms(session.disc, fake_teacher)
                )
            if "teacher_disc" in needed:
                term_values["teacher_disc"] = _detach_terms(
                    models.discriminator_terms(session.disc, real, fake_teacher)
                )

    if strat.extra == EXTRA_INTERMEDIATE:
        fake_student, tap_student = session.student.forward_with_tap(z)
        term_values["extra"] = {"intermediate_mse": F.mse_loss(tap_student, tap_teacher)}
    else:
        fake_student = session.student(z)
        if strat.extra == EXTRA_OUTPUT:
            term_values["extra"] = {"output_mse": F.mse_loss(fake_student, fake_teacher)}
    if "student_gen" in needed:
        term_values["student_gen"] = models.generator_terms(session.disc, fake_student)
    if "student_disc" in needed:
        term_values["student_disc"] = models.discriminator_terms(session.disc, real, fake_student)

    for vec_name, terms in term_values.items():
        assert_finite_terms(terms, vec_name)
        for term, value in terms.items():
            losses[f"{vec_name}.{term}"] = _scalar(value)

    g_obj, components = generator_objective(strat, term_values, session.weights)
    for comp, value in components.items():
        losses[comp] = _scalar(value)
    losses["gen_objective"] = _scalar(g_obj)

    # backward also deposits grads in the discriminator (the objective flows
    # through it); those are cleared at the start of the next D phase
    session.opt_g.zero_grad()
    g_obj.backward()
    session.opt_g.step()

    # (4) keep pruned positions exactly zero, then advance
    if session.g_masks is not None:
        session.g_masks.apply()
    session.step += 1

    realized = session.g_masks.realized_sparsity() if session.g_masks else 0.0
    return StepReport(
        step=session.step - 1,
        losses=losses,
        sparsity_target=target,
        sparsity_realized=realized,
        lr=session.lr,
        wall_time=time.perf_counter() - t0,
    )


def run_compression(manifest: ExperimentManifest, resume: bool = False) -> CompressionResult:
    """Execute a full run: steps, metrics log, checkpoints, resolved manifest."""
    out_dir = Path(manifest.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path = out_dir / "last.gcz"
    resume_ckpt = None
    if resume and last_path.exists():
        resume_ckpt = load_checkpoint(last_path)
        log.info("resuming from %s at step %d", last_path, resume_ckpt.step)

    session = CompressionSession.from_manifest(manifest, resume_from=resume_ckpt)
    manifest.write(out_dir / "manifest.json")
    metrics_path = out_dir / "metrics.jsonl"
    if resume_ckpt is None and metrics_path.exists():
        metrics_path.unlink()

    teacher_checksum = parameter_checksum(session.teacher) if session.teacher is not None else None

    last_record = {}
    with MetricsLog(metrics_path, append=resume_ckpt is not None) as mlog:
        while session.step < session.total_steps:
            batch = session.dataset.batch_at(session.step, session.batch_size, manifest.seed)
            report = compression_step(session, batch)
            record = {
                "step": report.step,
                "sparsity_target": report.sparsity_target,
                "sparsity_realized": report.sparsity_realized,
                "lr": report.lr,
                "wall_time": report.wall_time,
            }
            record.update(report.losses)
            mlog.write(record)
            last_record = {k: v for k, v in record.items() if k != "wall_time"}
            if (
                manifest.checkpoint_every
                and session.step % manifest.checkpoint_every == 0
                and session.step < session.total_steps
            ):
                save_checkpoint(session.to_checkpoint(last_record), last_path)

    if teacher_checksum is not None and parameter_checksum(session.teacher) != teacher_checksum:
        raise NumericError("teacher generator parameters changed during the run")

    final_path = out_dir / "final.gcz"
    final = session.to_checkpoint(last_record)
    save_checkpoint(final, final_path)
    save_checkpoint(final, last_path)
    return CompressionResult(
        out_dir=out_dir,
        final_checkpoint=final_path,
        metrics_log=metrics_path,
        steps_run=session.total_steps,
    )


def sample_images(generator: nn.Module, spec, n: int, seed: int,
                  batch_size: int = 256) -> torch.Tensor:
    """Draw n samples from a generator, deterministic in the seed.

    Generators run in train mode (batch-stat normalization, matching how they
    are trained), so the batch size here is part of the sampling recipe.
    """
    g = torch.Generator().manual_seed(seed)
    generator.train()
    outputs = []
    with torch.no_grad():
        remaining = n
        while remaining > 0:
            take = min(batch_size, remaining)
            z = models.draw_latents(spec, take, g)
            outputs.append(generator(z))
            remaining -= take
    return torch.cat(outputs, dim=0)


def generator_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the (possibly width-scaled) generator a checkpoint was trained with."""
    strategy = resolve_strategy(ckpt.manifest["recipe"])
    spec = models.resolve_task(ckpt.manifest["task"])
    if strategy.width_param_fraction is not None:
        spec = models.scale_task_width(spec, strategy.width_param_fraction)
    gen = models.GeneratorNet(spec.generator_arch, spec.image_shape, spec.latent_dim)
    load_model_parameters(ckpt.parameters, "generator", gen)
    return gen, spec


def evaluate_checkpoint(checkpoint_path, *, extractor_id: str | None = None,
                        extractor_path: str | None = None, samples: int | None = None,
                        seed: int | None = None, data_dir: str | None = None,
                        out_path=None) -> dict:
    """Compute the FID record for one checkpoint: generated samples vs the
    real train split, under one fixed extractor, plus sparsity accounting."""
    from .metrics import feature_stats, frechet_distance, resolve_extractor, sparsity_report

    ckpt = load_checkpoint(checkpoint_path)
    gen, spec = generator_from_checkpoint(ckpt)
    manifest = ckpt.manifest
    samples = samples or manifest.get("eval_samples", 10000)
    seed = manifest["seed"] + 909 if seed is None else seed
    extractor = resolve_extractor(extractor_id or manifest.get("extractor") or spec.extractor_id,
                                  extractor_path)

    real = load_dataset(spec.dataset, "train", manifest["seed"],
                        directory=data_dir or manifest.get("data_dir"),
                        image_shape=spec.image_shape)
    n_real = min(samples, len(real))
    # seeded subset, not the head: file layouts are not guaranteed shuffled
    real_sel = torch.randperm(len(real), generator=torch.Generator().manual_seed(1))[:n_real]
    fake = sample_images(gen, spec, samples, seed)
    stats_fake = feature_stats(fake, extractor)
    stats_real = feature_stats(real.samples[real_sel], extractor)
    fid = frechet_distance(stats_fake, stats_real)

    sparsity = sparsity_report(ckpt)
    record = {
        "checkpoint": str(checkpoint_path),
        "task": manifest["task"],
        "recipe": manifest["recipe"],
        "granularity": manifest["granularity"],
        "sparsity": sparsity["aggregate_sparsity"],
        "seed": manifest["seed"],
        "eval_seed": seed,
        "fid": fid,
        "samples_generated": samples,
        "samples_real": n_real,
        "extractor": extractor.spec.extractor_id,
        "per_layer_sparsity": sparsity["layers"],
    }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    return record
