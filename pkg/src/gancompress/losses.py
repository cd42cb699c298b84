"""Consistency objectives between a reference (teacher) model and a
compressed (student) model.

Loss term vectors are plain dicts mapping a term name ("gen", "cla", "rec",
"dis", "gp", ...) to a scalar: a float for detached teacher values, a float
or 0-dim torch tensor for student values so gradients can flow.  The
per-term distance is |teacher - student| / max(|teacher|, epsilon), i.e. a
normalized deviation that is invariant to the term's scale; term distances
combine as a weighted sum.
"""

import math
from dataclasses import dataclass, field

from .errors import NumericError, ValidationError

# Defaults mirror the public StarGAN training weights this term vocabulary
# comes from (cls=1, rec=10, gp=10); single-term tasks only ever use the
# unit-weighted leading entries.
DEFAULT_GENERATIVE_WEIGHTS = {"gen": 1.0, "cla": 1.0, "rec": 10.0}
DEFAULT_DISCRIMINATIVE_WEIGHTS = {"dis": 1.0, "gp": 10.0}


@dataclass(frozen=True)
class ConsistencyWeights:
    """Per-term weights plus the generative/discriminative mixing factor."""

    generative_weights: dict = field(default_factory=lambda: dict(DEFAULT_GENERATIVE_WEIGHTS))
    discriminative_weights: dict = field(
        default_factory=lambda: dict(DEFAULT_DISCRIMINATIVE_WEIGHTS)
    )
    lam: float = 0.5       # weight on the discriminative consistency loss
    epsilon: float = 1e-8  # guard for |teacher| == 0 denominators

    def __post_init__(self):
        for name, w in {**self.generative_weights, **self.discriminative_weights}.items():
            if w < 0:
                raise ValidationError(f"weight for term '{name}' must be >= 0, got {w}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")


def normalized_term_distance(teacher_value, student_value, epsilon: float = 1e-8):
    """|teacher - student| / max(|teacher|, epsilon).

    The teacher value is coerced to a plain float, so it never carries
    gradient; the student value may be a 0-dim tensor.
    """
    if hasattr(teacher_value, "detach"):
        teacher_value = teacher_value.detach()
    t = float(teacher_value)
    return abs(t - student_value) / max(abs(t), epsilon)


def _weighted_distance_sum(teacher: dict, student: dict, weight_map: dict, epsilon: float, kind: str):
    t_names, s_names = set(teacher), set(student)
    if t_names != s_names:
        raise ValidationError(
            f"{kind} term sets differ: missing from student {sorted(t_names - s_names)}, "
            f"missing from teacher {sorted(s_names - t_names)}"
        )
    unweighted = sorted(t_names - set(weight_map))
    if unweighted:
        raise ValidationError(f"no {kind} weight configured for terms: {unweighted}")
    total = 0.0
    for name in teacher:
        total = total + weight_map[name] * normalized_term_distance(
            teacher[name], student[name], epsilon
        )
    return total


def generative_consistency(teacher: dict, student: dict, weights: ConsistencyWeights):
    """Weighted normalized distance between teacher and student generator terms."""
    return _weighted_distance_sum(
        teacher, student, weights.generative_weights, weights.epsilon, "generative"
    )


def discriminative_consistency(teacher: dict, student: dict, weights: ConsistencyWeights):
    """Weighted normalized distance between teacher and student discriminator terms."""
    return _weighted_distance_sum(
        teacher, student, weights.discriminative_weights, weights.epsilon, "discriminative"
    )


def overall_loss(l_gc, l_dc, lam: float):
    """Combined objective: generative part plus lambda times discriminative part."""
    return l_gc + lam * l_dc


def assert_finite_terms(terms: dict, path: str) -> None:
    """Raise NumericError naming the first non-finite term under ``path``."""
    for name, value in terms.items():
        if hasattr(value, "detach"):
            value = value.detach()
        if not math.isfinite(float(value)):
            raise NumericError(f"non-finite loss term '{path}.{name}' = {float(value)}")
