"""Magnitude-based mask construction and application.

Weight tensors are treated as 4-D arrays with axes (out-channels F,
in-channels C, kernel-height H, kernel-width W); fully-connected weights are
viewed as (F, C, 1, 1).  A pruning group is a single element (0D), a W-length
row (1D), an HxW kernel slice (2D), or a CxHxW filter slice (3D).  Groups are
scored by the L1 norm of their elements and the smallest-scored groups are
zeroed, lowest index first on ties, so results are reproducible.

All functions are pure: they never modify their inputs.
"""

from dataclasses import dataclass
from enum import Enum

import torch

from .errors import ValidationError


class Granularity(Enum):
    ELEMENT = "element"   # 0D: single scalars
    VECTOR = "vector"     # 1D: rows of length W
    KERNEL = "kernel"     # 2D: HxW slices
    FILTER = "filter"     # 3D: CxHxW slices

    @property
    def group_dims(self) -> int:
        """Number of trailing tensor dims that form one group."""
        return {
            Granularity.ELEMENT: 0,
            Granularity.VECTOR: 1,
            Granularity.KERNEL: 2,
            Granularity.FILTER: 3,
        }[self]


@dataclass(frozen=True)
class PruningMask:
    """Binary mask over one weight tensor.

    ``bits`` has the owning tensor's shape with 1 = keep, 0 = prune; bits are
    constant within every group.  ``sparsity`` is the exact zero fraction.
    """

    bits: torch.Tensor
    granularity: Granularity
    sparsity: float

    def __post_init__(self):
        if self.bits.dtype != torch.bool:
            raise ValidationError(f"mask bits must be bool, got {self.bits.dtype}")


def _check_4d(weights: torch.Tensor, layer_id: str) -> None:
    if weights.dim() != 4:
        raise ValidationError(
            f"layer '{layer_id}': expected a 4-D weight tensor, got shape {tuple(weights.shape)}"
        )
    if any(d < 1 for d in weights.shape):
        raise ValidationError(
            f"layer '{layer_id}': all dimensions must be >= 1, got {tuple(weights.shape)}"
        )


def group_count(shape: tuple[int, ...], granularity: Granularity) -> int:
    """Number of pruning groups a tensor of ``shape`` has at ``granularity``."""
    if len(shape) != 4:
        raise ValidationError(f"expected 4-D shape, got {shape}")
    n = 1
    for d in shape[: 4 - granularity.group_dims]:
        n *= d
    return n


def compute_group_scores(
    weights: torch.Tensor, granularity: Granularity, layer_id: str = "?"
) -> torch.Tensor:
    """L1 score per pruning group, enumerated row-major over (F, C, H, W).

    Raises ValidationError naming the layer if the weights are not finite.
    """
    _check_4d(weights, layer_id)
    if not torch.isfinite(weights).all():
        raise ValidationError(f"layer '{layer_id}': weights contain NaN or Inf")
    groups = group_count(tuple(weights.shape), granularity)
    return weights.detach().abs().reshape(groups, -1).sum(dim=1)


def build_mask(
    scores: torch.Tensor,
    granularity: Granularity,
    target_sparsity: float,
    shape: tuple[int, ...],
) -> PruningMask:
    """Mask zeroing exactly floor(target_sparsity * group_count) groups.

    The zeroed groups are those with the smallest scores; ties break toward
    the lower group index.
    """
    if not 0.0 <= target_sparsity <= 1.0:
        raise ValidationError(f"target_sparsity must be in [0, 1], got {target_sparsity}")
    n_groups = group_count(tuple(shape), granularity)
    scores = torch.as_tensor(scores, dtype=torch.float64).flatten()
    if scores.numel() != n_groups:
        raise ValidationError(
            f"got {scores.numel()} scores but shape {tuple(shape)} has "
            f"{n_groups} groups at granularity {granularity.value}"
        )
    n_prune = int(target_sparsity * n_groups)  # floor: prefer under-pruning
    group_bits = torch.ones(n_groups, dtype=torch.bool)
    if n_prune > 0:
        order = torch.argsort(scores, stable=True)
        group_bits[order[:n_prune]] = False
    group_size = 1
    for d in shape[4 - granularity.group_dims:]:
        group_size *= d
    bits = group_bits.repeat_interleave(group_size).reshape(shape)
    return PruningMask(bits=bits, granularity=granularity, sparsity=sparsity_of(bits))


def apply_mask(weights: torch.Tensor, mask: PruningMask) -> torch.Tensor:
    """Elementwise product; masked positions come out exactly 0.0."""
    if tuple(weights.shape) != tuple(mask.bits.shape):
        raise ValidationError(
            f"weight shape {tuple(weights.shape)} does not match mask shape "
            f"{tuple(mask.bits.shape)}"
        )
    return weights * mask.bits.to(weights.dtype)


def sparsity_of(mask) -> float:
    """Zero fraction of a mask (exact integer counts, then one division).

    Accepts a PruningMask or a raw bit tensor.
    """
    bits = mask.bits if isinstance(mask, PruningMask) else mask
    total = bits.numel()
    zeros = int(total - bits.sum().item()) if bits.dtype == torch.bool else int(
        (bits == 0).sum().item()
    )
    return zeros / total
