"""Quantitative quality metrics: Frechet distance over extracted features,
PSNR, SSIM, and sparsity accounting.

Frechet scores computed with the small desk-scale extractor are only
comparable to each other (same extractor on both operands); they are not on
the scale of scores from the big public inception extractor.
"""

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint, load_checkpoint, model_parameters, load_model_parameters, save_checkpoint
from .errors import ConfigError, NumericError, ValidationError
from .models import DigitFeatureNet


@dataclass(frozen=True)
class FrechetStats:
    """Sufficient statistics of a feature distribution."""

    mean: np.ndarray        # (d,)
    cov: np.ndarray         # (d, d), unbiased
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValidationError(f"need at least 2 samples, got {self.count}")
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise ValidationError(
                f"inconsistent stats shapes: mean {self.mean.shape}, cov {self.cov.shape}"
            )
        asym = float(np.abs(self.cov - self.cov.T).max())
        if asym > 1e-9:
            raise ValidationError(f"covariance asymmetric by {asym:.3e} (> 1e-9)")


class StatsAccumulator:
    """Streaming mean/covariance over feature batches (stable pairwise merge)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.n = 0
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros((dim, dim), dtype=np.float64)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise ValidationError(f"expected (*, {self.dim}) features, got {batch.shape}")
        nb = batch.shape[0]
        if nb == 0:
            return
        mb = batch.mean(axis=0)
        centered = batch - mb
        m2b = centered.T @ centered
        if self.n == 0:
            self.n, self.mean, self.m2 = nb, mb, m2b
            return
        delta = mb - self.mean
        total = self.n + nb
        self.m2 = self.m2 + m2b + np.outer(delta, delta) * (self.n * nb / total)
        self.mean = self.mean + delta * (nb / total)
        self.n = total

    def finalize(self) -> FrechetStats:
        if self.n < 2:
            raise ValidationError(f"need at least 2 samples, got {self.n}")
        cov = self.m2 / (self.n - 1)
        cov = (cov + cov.T) / 2.0
        return FrechetStats(mean=self.mean.copy(), cov=cov, count=self.n)


def feature_stats(images, extractor, batch_size: int = 256) -> FrechetStats:
    """Mean and unbiased covariance of extracted features.

    ``images`` is a tensor (N, C, H, W) in [-1, 1] or an iterable of such
    batches; ``extractor`` maps a batch to (B, d) features.
    """
    acc = StatsAccumulator(extractor.feature_dim)
    if isinstance(images, torch.Tensor):
        batches = (images[i : i + batch_size] for i in range(0, images.shape[0], batch_size))
    else:
        batches = images
    for batch in batches:
        acc.update(extractor.extract(batch))
    return acc.finalize()


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition,
    clamping negative eigenvalues at 0."""
    try:
        vals, vecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"matrix square root failed to converge: {e}") from e
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """||mean_a - mean_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2)).

    The cross-covariance square root is evaluated on the symmetric form
    sqrt(cov_a) cov_b sqrt(cov_a); small negative totals (within 1e-6 of
    zero) are clamped to 0.
    """
    if a.mean.size != b.mean.size:
        raise ValidationError(f"feature dims differ: {a.mean.size} vs {b.mean.size}")
    delta = a.mean - b.mean
    root_a = _sym_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    inner = (inner + inner.T) / 2.0
    try:
        cross_vals = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"matrix square root failed to converge: {e}") from e
    trace_cross = float(np.sqrt(np.clip(cross_vals, 0.0, None)).sum())
    value = float(delta @ delta + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_cross)
    if value < -1e-6:
        raise NumericError(f"frechet distance came out negative: {value}")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# PSNR / SSIM

def psnr(image, reference, max_value: float) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical.

    The MSE uses a correctly-rounded sum (math.fsum), so analytic cases like
    a constant 0.1 offset on unit-range images come out at exactly 20 dB.
    """
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if max_value <= 0:
        raise ValidationError(f"max_value must be > 0, got {max_value}")
    sq = (a - b) ** 2
    mse = math.fsum(sq.ravel().tolist()) / sq.size
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(max_value) - 10.0 * math.log10(mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _gaussian_window() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * _SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_moments(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Weighted window sums at every fully-covered position ('valid' mode)."""
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("ijkl,kl->ij", view, window)


def ssim(image, reference, data_range: float = 1.0) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    stabilizers C1=(0.01 L)^2 and C2=(0.03 L)^2, averaged over fully-covered
    windows (and over channels for multi-channel input)."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValidationError(f"expected (H, W) or (C, H, W) images, got shape {a.shape}")
    if a.shape[1] < _SSIM_WINDOW or a.shape[2] < _SSIM_WINDOW:
        raise ValidationError(f"images must be at least {_SSIM_WINDOW}px, got {a.shape}")
    window = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    channel_means = []
    for x, y in zip(a, b):
        mu_x = _windowed_moments(x, window)
        mu_y = _windowed_moments(y, window)
        var_x = _windowed_moments(x * x, window) - mu_x * mu_x
        var_y = _windowed_moments(y * y, window) - mu_y * mu_y
        cov_xy = _windowed_moments(x * y, window) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        channel_means.append(np.mean(num / den))
    return float(np.mean(channel_means))


# ---------------------------------------------------------------------------
# sparsity accounting

def sparsity_report(ckpt: Checkpoint) -> dict:
    """Exact per-layer and aggregate zero counts from the checkpoint's masks."""
    layers = []
    masked_total = 0
    masked_zeros = 0
    for name in sorted(ckpt.masks):
        mask = ckpt.masks[name]
        total = mask.bits.numel()
        zeros = int(total - mask.bits.sum().item())
        layers.append({
            "name": name,
            "total": total,
            "zeros": zeros,
            "sparsity": zeros / total,
            "granularity": mask.granularity.value,
        })
        masked_total += total
        masked_zeros += zeros
    param_total = sum(t.numel() for t in ckpt.parameters.values())
    return {
        "layers": layers,
        "aggregate_sparsity": (masked_zeros / masked_total) if masked_total else 0.0,
        "masked_parameters": masked_total,
        "masked_zeros": masked_zeros,
        "parameters_total": param_total,
    }


# ---------------------------------------------------------------------------
# feature extractors

@dataclass(frozen=True)
class FeatureExtractorSpec:
    extractor_id: str
    feature_dim: int
    checkpoint_ref: str   # file path, or "builtin" for parameter-free extractors


class IdentityExtractor:
    """Flattens samples; the features ARE the data (for low-dim tasks)."""

    def __init__(self, feature_dim: int = 2):
        self.spec = FeatureExtractorSpec("identity", feature_dim, "builtin")
        self.feature_dim = feature_dim

    def extract(self, batch: torch.Tensor) -> np.ndarray:
        flat = batch.detach().reshape(batch.shape[0], -1)
        if flat.shape[1] != self.feature_dim:
            raise ValidationError(
                f"identity extractor expects {self.feature_dim} values per sample, "
                f"got {flat.shape[1]}"
            )
        return flat.to(torch.float64).cpu().numpy()


class DigitCnnExtractor:
    """Penultimate features of the small digit classifier (d=64).

    Input batches are resized to 28x28 when needed, so the one checkpoint
    serves every image task size.
    """

    def __init__(self, net: DigitFeatureNet, extractor_id: str, path: str):
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.spec = FeatureExtractorSpec(extractor_id, DigitFeatureNet.FEATURE_DIM, path)
        self.feature_dim = DigitFeatureNet.FEATURE_DIM

    def extract(self, batch: torch.Tensor) -> np.ndarray:
        x = batch.detach()
        if x.shape[1:] != DigitFeatureNet.INPUT_SHAPE:
            x = F.interpolate(x, size=DigitFeatureNet.INPUT_SHAPE[1:], mode="bilinear",
                              align_corners=False, antialias=True)
        with torch.no_grad():
            feats = self.net.features(x)
        return feats.to(torch.float64).cpu().numpy()


def builtin_extractor_path() -> Path:
    return Path(__file__).parent / "assets" / "mnist-cnn-v1.gcz"


def _extractor_search_paths(extractor_id: str, explicit: str | None):
    if explicit:
        return [Path(explicit)]
    paths = []
    cache = os.environ.get("GANCOMPRESS_CACHE_DIR")
    if cache:
        paths.append(Path(cache) / f"{extractor_id}.gcz")
    paths.append(builtin_extractor_path())
    return paths


def resolve_extractor(extractor_id: str, path: str | None = None):
    """Look up an extractor: explicit path > $GANCOMPRESS_CACHE_DIR > packaged."""
    if extractor_id == "identity":
        return IdentityExtractor()
    if extractor_id == "mnist-cnn-v1":
        candidates = _extractor_search_paths(extractor_id, path)
        ckpt_path = next((p for p in candidates if p.exists()), None)
        if ckpt_path is None:
            raise ConfigError(
                f"extractor checkpoint not found (looked at: "
                f"{', '.join(str(p) for p in candidates)}); train it with "
                f"`gancompress train-extractor`"
            )
        ckpt = load_checkpoint(ckpt_path)
        net = DigitFeatureNet()
        load_model_parameters(ckpt.parameters, "model", net)
        return DigitCnnExtractor(net, extractor_id, str(ckpt_path))
    raise ConfigError(f"unknown extractor '{extractor_id}'")


def train_digit_extractor(train_images: torch.Tensor, train_labels: torch.Tensor,
                          out_path, epochs: int = 2, seed: int = 7,
                          batch_size: int = 128) -> Path:
    """Fit the desk feature extractor once and checkpoint it.

    ``train_images`` are (N, 1, 28, 28) in [-1, 1].
    """
    torch.manual_seed(seed)
    net = DigitFeatureNet()
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    n = train_images.shape[0]
    order_gen = torch.Generator().manual_seed(seed)
    net.train()
    for _ in range(epochs):
        perm = torch.randperm(n, generator=order_gen)
        for i in range(0, n - batch_size + 1, batch_size):
            sel = perm[i : i + batch_size]
            logits = net(train_images[sel])
            loss = F.cross_entropy(logits, train_labels[sel].long())
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        pred = net(train_images[:2048]).argmax(dim=1)
        acc = float((pred == train_labels[:2048].long()).float().mean())
    ckpt = Checkpoint(
        manifest={"kind": "feature-extractor", "extractor_id": "mnist-cnn-v1",
                  "feature_dim": DigitFeatureNet.FEATURE_DIM, "seed": seed,
                  "epochs": epochs, "train_accuracy": round(acc, 4)},
        parameters=model_parameters("model", net),
    )
    out_path = Path(out_path)
    save_checkpoint(ckpt, out_path)
    return out_path
