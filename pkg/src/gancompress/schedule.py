"""Sparsity schedules: gradual (cubic ramp) and one-shot pruning regimes."""

from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class SparsitySchedule:
    """Maps a training step to the target sparsity fraction.

    ``gradual`` ramps from s_initial at step_begin to s_final at step_end
    along the cubic s(t) = s_final + (s_initial - s_final) * (1 - p)^3 with
    p the clamped ramp progress.  ``one_shot`` jumps straight to s_final at
    step_begin.  Masks are recomputed every ``update_interval`` steps while
    the schedule is active.
    """

    kind: str  # "gradual" | "one_shot"
    s_initial: float
    s_final: float
    step_begin: int
    step_end: int
    update_interval: int = 1

    def __post_init__(self):
        if self.kind not in ("gradual", "one_shot"):
            raise ValidationError(f"unknown schedule kind '{self.kind}'")
        if not 0.0 <= self.s_initial <= self.s_final <= 1.0:
            raise ValidationError(
                f"need 0 <= s_initial <= s_final <= 1, got "
                f"s_initial={self.s_initial}, s_final={self.s_final}"
            )
        if self.kind == "one_shot" and self.s_initial != self.s_final:
            raise ValidationError("one_shot schedules require s_initial == s_final")
        if self.step_begin < 0 or self.step_end <= self.step_begin:
            raise ValidationError(
                f"need 0 <= step_begin < step_end, got "
                f"begin={self.step_begin}, end={self.step_end}"
            )
        if self.update_interval < 1:
            raise ValidationError(f"update_interval must be >= 1, got {self.update_interval}")

    @classmethod
    def gradual(cls, s_initial, s_final, step_begin, step_end, update_interval=1):
        return cls("gradual", s_initial, s_final, step_begin, step_end, update_interval)

    @classmethod
    def one_shot(cls, sparsity, at_step, horizon):
        """Prune to ``sparsity`` once at ``at_step`` and never recompute.

        ``horizon`` bounds the active window; the update interval is sized so
        only ``at_step`` itself triggers a mask rebuild.
        """
        end = max(horizon, at_step + 1)
        return cls("one_shot", sparsity, sparsity, at_step, end, end - at_step + 1)

    def sparsity_at(self, step: int) -> float:
        """Target sparsity at ``step``; endpoints return the stored values exactly."""
        if self.kind == "one_shot":
            return self.s_final if step >= self.step_begin else 0.0
        if step <= self.step_begin:
            return self.s_initial
        if step >= self.step_end:
            return self.s_final
        p = (step - self.step_begin) / (self.step_end - self.step_begin)
        return self.s_final + (self.s_initial - self.s_final) * (1.0 - p) ** 3

    def should_update_mask(self, step: int) -> bool:
        """True on steps where the mask is recomputed from current magnitudes."""
        if step < self.step_begin or step > self.step_end:
            return False
        return (step - self.step_begin) % self.update_interval == 0
