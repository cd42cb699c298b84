"""Toy GAN zoo and deterministic model construction.

Architectures are declared as layer lists (kind, channels, kernel/stride/
padding, norm, activation) and validated while building: channel chaining
and the spatial size are tracked so a generator that does not produce the
task's image shape fails fast, naming the first offending layer.

Tasks:
  dcgan-mnist     64x64 single-channel digit synthesis (DCGAN-style nets)
  dcgan-mnist-28  28x28 reduced variant for fast runs
  ring2d          2-D synthetic distribution (8 Gaussian modes on a ring),
                  samples carried as (2, 1, 1) tensors so the same plumbing
                  applies
"""

import math
from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError

LRELU_SLOPE = 0.2


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    image_shape: tuple          # (channels, height, width)
    latent_dim: int
    generator_arch: tuple       # tuple of layer dicts
    discriminator_arch: tuple
    dataset: str                # dataset id consumed by gancompress.data
    input_kind: str = "latent"
    batch_size: int = 64
    lr: float = 2e-4
    betas: tuple = (0.5, 0.999)
    extractor_id: str = "mnist-cnn-v1"
    distill_tap: int | None = None  # generator block index for activation distillation


def _conv(in_ch, out_ch, kernel, stride, padding, norm="none", act="none"):
    return {"kind": "conv", "in": in_ch, "out": out_ch, "kernel": kernel,
            "stride": stride, "padding": padding, "norm": norm, "act": act}


def _convT(in_ch, out_ch, kernel, stride, padding, norm="none", act="none"):
    return {"kind": "convT", "in": in_ch, "out": out_ch, "kernel": kernel,
            "stride": stride, "padding": padding, "norm": norm, "act": act}


def _linear(in_f, out_f, act="none"):
    return {"kind": "linear", "in": in_f, "out": out_f, "act": act}


def _conv_out(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _convT_out(size, kernel, stride, padding):
    return (size - 1) * stride - 2 * padding + kernel


def _build_blocks(arch, image_shape, latent_dim, kind: str):
    """Materialize a layer list into (blocks, tap_candidates) with validation."""
    blocks = []
    if kind == "generator":
        channels, h, w = latent_dim, 1, 1
    else:
        channels, h, w = image_shape
    for i, spec in enumerate(arch):
        where = f"{kind} layer {i} ({spec['kind']})"
        lk = spec["kind"]
        if lk in ("conv", "convT"):
            if spec["in"] != channels:
                raise ValidationError(
                    f"{where}: expects {spec['in']} input channels but the chain carries {channels}"
                )
            k, s, p = spec["kernel"], spec["stride"], spec["padding"]
            if lk == "conv":
                blocks.append(nn.Conv2d(spec["in"], spec["out"], k, s, p, bias=spec.get("bias", False)))
                h, w = _conv_out(h, k, s, p), _conv_out(w, k, s, p)
            else:
                blocks.append(nn.ConvTranspose2d(spec["in"], spec["out"], k, s, p, bias=spec.get("bias", False)))
                h, w = _convT_out(h, k, s, p), _convT_out(w, k, s, p)
            if h < 1 or w < 1:
                raise ValidationError(f"{where}: spatial size collapsed to {h}x{w}")
            channels = spec["out"]
        elif lk == "linear":
            if spec["in"] != channels * h * w:
                raise ValidationError(
                    f"{where}: expects {spec['in']} input features but the chain carries "
                    f"{channels}x{h}x{w} = {channels * h * w}"
                )
            blocks.append(nn.Flatten())
            blocks.append(nn.Linear(spec["in"], spec["out"], bias=spec.get("bias", True)))
            channels, h, w = spec["out"], 1, 1
        else:
            raise ValidationError(f"{where}: unknown layer kind")
        norm = spec.get("norm", "none")
        if norm == "batch":
            blocks.append(nn.BatchNorm2d(channels) if lk != "linear" else nn.BatchNorm1d(channels))
        elif norm != "none":
            raise ValidationError(f"{where}: unknown norm '{norm}'")
        act = spec.get("act", "none")
        if act == "relu":
            blocks.append(nn.ReLU(inplace=True))
        elif act == "lrelu":
            blocks.append(nn.LeakyReLU(LRELU_SLOPE, inplace=True))
        elif act == "tanh":
            blocks.append(nn.Tanh())
        elif act != "none":
            raise ValidationError(f"{where}: unknown activation '{act}'")
    return blocks, (channels, h, w)


class GeneratorNet(nn.Module):
    """Latent (N, latent_dim, 1, 1) -> image (N, C, H, W)."""

    def __init__(self, arch, image_shape, latent_dim, tap: int | None = None):
        super().__init__()
        blocks, out_shape = _build_blocks(arch, image_shape, latent_dim, "generator")
        if out_shape[0] * out_shape[1] * out_shape[2] != math.prod(image_shape):
            raise ValidationError(
                f"generator produces {out_shape}, task expects {tuple(image_shape)}"
            )
        self.net = nn.Sequential(*blocks)
        self.image_shape = tuple(image_shape)
        self.latent_dim = latent_dim
        # default tap: output of the middle block (used by activation distillation)
        self.tap = tap if tap is not None else len(blocks) // 2

    def forward(self, z):
        out = self.net(z.reshape(z.shape[0], self.latent_dim, 1, 1))
        return out.reshape(out.shape[0], *self.image_shape)

    def forward_with_tap(self, z):
        x = z.reshape(z.shape[0], self.latent_dim, 1, 1)
        tap_value = None
        for i, block in enumerate(self.net):
            x = block(x)
            if i == self.tap:
                tap_value = x
        return x.reshape(x.shape[0], *self.image_shape), tap_value


class DiscriminatorNet(nn.Module):
    """Image (N, C, H, W) -> logit (N,)."""

    def __init__(self, arch, image_shape):
        super().__init__()
        blocks, out_shape = _build_blocks(arch, image_shape, 0, "discriminator")
        if math.prod(out_shape) != 1:
            raise ValidationError(f"discriminator must end in one logit, got {out_shape}")
        self.net = nn.Sequential(*blocks)
        self.image_shape = tuple(image_shape)

    def forward(self, x):
        return self.net(x.reshape(x.shape[0], *self.image_shape)).reshape(-1)


def init_parameters(model: nn.Module, seed: int) -> None:
    """DCGAN-style init, reproducible from ``seed`` alone."""
    g = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
            with torch.no_grad():
                m.weight.normal_(1.0, 0.02, generator=g)
                m.bias.zero_()


def build_models(spec: TaskSpec, seed: int):
    """Construct (generator, discriminator) with deterministic initialization."""
    gen = GeneratorNet(spec.generator_arch, spec.image_shape, spec.latent_dim, spec.distill_tap)
    disc = DiscriminatorNet(spec.discriminator_arch, spec.image_shape)
    init_parameters(gen, seed)
    init_parameters(disc, seed + 1)
    return gen, disc


def draw_latents(spec: TaskSpec, n: int, generator: torch.Generator) -> torch.Tensor:
    return torch.randn(n, spec.latent_dim, 1, 1, generator=generator)


# ---------------------------------------------------------------------------
# standard single-logit adversarial loss terms

def generator_terms(disc: nn.Module, fake: torch.Tensor) -> dict:
    """Generator's standard loss terms: fool the discriminator."""
    logits = disc(fake)
    return {"gen": F.binary_cross_entropy_with_logits(logits, torch.ones_like(logits))}


def discriminator_terms(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> dict:
    """Discriminator's standard loss terms: real scored 1, fake scored 0."""
    real_logits = disc(real)
    fake_logits = disc(fake)
    loss = F.binary_cross_entropy_with_logits(
        real_logits, torch.ones_like(real_logits)
    ) + F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    return {"dis": loss}


# ---------------------------------------------------------------------------
# parameter accounting and width scaling

def _arch_param_count(arch, latent_dim, image_shape) -> int:
    total = 0
    for spec in arch:
        lk = spec["kind"]
        if lk in ("conv", "convT"):
            total += spec["in"] * spec["out"] * spec["kernel"] ** 2
            if spec.get("bias", False):
                total += spec["out"]
            if spec.get("norm", "none") == "batch":
                total += 2 * spec["out"]
        elif lk == "linear":
            total += spec["in"] * spec["out"]
            if spec.get("bias", True):
                total += spec["out"]
            if spec.get("norm", "none") == "batch":
                total += 2 * spec["out"]
    return total


def _scale_arch(arch, multiplier):
    """Scale hidden widths through the chain; the input and final output stay fixed.

    Only valid for homogeneous chains (all-conv or all-linear), which is what
    the generator archs in the registry are.
    """
    scaled = []
    prev_out = None
    for i, spec in enumerate(arch):
        s = dict(spec)
        if prev_out is not None:
            s["in"] = prev_out
        if i < len(arch) - 1:
            s["out"] = max(1, round(spec["out"] * multiplier))
        prev_out = s["out"]
        scaled.append(s)
    return tuple(scaled)


def scale_task_width(spec: TaskSpec, param_fraction: float) -> TaskSpec:
    """Shrink generator widths until its parameter count hits ``param_fraction``
    of the dense count (binary search over the width multiplier)."""
    dense = _arch_param_count(spec.generator_arch, spec.latent_dim, spec.image_shape)
    target = param_fraction * dense
    lo, hi = 0.05, 1.0
    best = spec.generator_arch
    best_err = float("inf")
    for _ in range(60):
        mid = (lo + hi) / 2
        arch = _scale_arch(spec.generator_arch, mid)
        count = _arch_param_count(arch, spec.latent_dim, spec.image_shape)
        if abs(count - target) < best_err:
            best, best_err = arch, abs(count - target)
        if count > target:
            hi = mid
        else:
            lo = mid
    return replace(spec, generator_arch=best)


def generator_param_count(spec: TaskSpec) -> int:
    return _arch_param_count(spec.generator_arch, spec.latent_dim, spec.image_shape)


# ---------------------------------------------------------------------------
# task registry

def _dcgan64():
    g = (
        _convT(100, 256, 4, 1, 0, norm="batch", act="relu"),
        _convT(256, 128, 4, 2, 1, norm="batch", act="relu"),
        _convT(128, 64, 4, 2, 1, norm="batch", act="relu"),
        _convT(64, 32, 4, 2, 1, norm="batch", act="relu"),
        _convT(32, 1, 4, 2, 1, act="tanh"),
    )
    d = (
        _conv(1, 32, 4, 2, 1, act="lrelu"),
        _conv(32, 64, 4, 2, 1, norm="batch", act="lrelu"),
        _conv(64, 128, 4, 2, 1, norm="batch", act="lrelu"),
        _conv(128, 256, 4, 2, 1, norm="batch", act="lrelu"),
        _conv(256, 1, 4, 1, 0),
    )
    return TaskSpec(
        task_id="dcgan-mnist", image_shape=(1, 64, 64), latent_dim=100,
        generator_arch=g, discriminator_arch=d, dataset="mnist",
    )


def _dcgan28():
    g = (
        _convT(64, 128, 3, 1, 0, norm="batch", act="relu"),
        _convT(128, 64, 3, 2, 0, norm="batch", act="relu"),
        _convT(64, 32, 4, 2, 1, norm="batch", act="relu"),
        _convT(32, 1, 4, 2, 1, act="tanh"),
    )
    d = (
        _conv(1, 32, 4, 2, 1, act="lrelu"),
        _conv(32, 64, 4, 2, 1, norm="batch", act="lrelu"),
        _conv(64, 128, 3, 2, 0, norm="batch", act="lrelu"),
        _conv(128, 1, 3, 1, 0),
    )
    return TaskSpec(
        task_id="dcgan-mnist-28", image_shape=(1, 28, 28), latent_dim=64,
        generator_arch=g, discriminator_arch=d, dataset="mnist",
    )


def _ring2d():
    g = (
        _linear(8, 64, act="relu"),
        _linear(64, 64, act="relu"),
        _linear(64, 2, act="tanh"),
    )
    d = (
        _linear(2, 64, act="lrelu"),
        _linear(64, 64, act="lrelu"),
        _linear(64, 1),
    )
    return TaskSpec(
        task_id="ring2d", image_shape=(2, 1, 1), latent_dim=8,
        generator_arch=g, discriminator_arch=d, dataset="ring2d",
        batch_size=256, lr=1e-3, extractor_id="identity",
    )


TASKS = {t.task_id: t for t in (_dcgan64(), _dcgan28(), _ring2d())}


def resolve_task(task_id: str) -> TaskSpec:
    if task_id not in TASKS:
        raise ValidationError(f"unknown task '{task_id}' (have: {', '.join(sorted(TASKS))})")
    return TASKS[task_id]


# ---------------------------------------------------------------------------
# feature extractor for FID at desk scale

class DigitFeatureNet(nn.Module):
    """Small digit classifier; penultimate 64-d layer doubles as the FID
    feature map.  Inputs are 28x28 single-channel images in [-1, 1]."""

    FEATURE_DIM = 64
    INPUT_SHAPE = (1, 28, 28)

    def __init__(self):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(1, 16, 3, 2, 1), nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, 2, 1), nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, 2, 1), nn.ReLU(inplace=True),
        )
        self.fc1 = nn.Linear(64 * 4 * 4, 64)
        self.fc2 = nn.Linear(64, 10)

    def features(self, x):
        h = self.conv(x).flatten(1)
        return F.relu(self.fc1(h))

    def forward(self, x):
        return self.fc2(self.features(x))
