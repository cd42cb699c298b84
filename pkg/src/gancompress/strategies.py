"""Declarative registry of the baseline compression recipes.

Each recipe (id "a".."n") fixes how the student generator and the
discriminator are initialized, whether a frozen dense teacher generator
participates, which loss groups are active, and any extra distillation
term.  Recipes are compared by running them through the same engine with
their declared configuration; nothing else differs between them.

Loss group ids:
  gc / dc -- consistency losses between teacher and student term vectors
  go / do -- the models' own standard adversarial losses

Reading of rows that list gc/dc without a teacher generator (d, e, f):
those recipes describe plain fine-tuning of the pruned model, so gc/dc are
taken to mean the compressed model's own standard losses.  This is encoded
as ``uses_own_losses`` below and noted per recipe.
"""

from dataclasses import dataclass, field, asdict

from .errors import ValidationError
from .losses import ConsistencyWeights, generative_consistency, discriminative_consistency, overall_loss

RECIPE_IDS = "abcdefghijklmn"

# distillation stand-ins
EXTRA_NONE = "none"
EXTRA_OUTPUT = "output_distill"          # squared distance between generator outputs
EXTRA_INTERMEDIATE = "intermediate_distill"  # squared distance on one named hidden activation


@dataclass(frozen=True)
class StrategyConfig:
    recipe_id: str
    label: str
    student_generator_init: str          # "random" | "from_dense"
    student_generator_pruned: bool
    keep_teacher_generator: bool         # frozen dense generator participates
    discriminator_init: str | None       # "random" | "pretrained" | "pretrained_sparse" | None
    discriminator_fixed: bool
    discriminator_pruned: bool
    active_losses: frozenset
    extra: str = EXTRA_NONE
    pruning_regime: str | None = None    # "gradual" | "one_shot" | None
    width_param_fraction: float | None = None  # recipe c: params target vs dense
    notes: str = ""

    @property
    def has_discriminator(self) -> bool:
        return self.discriminator_init is not None

    @property
    def uses_consistency_pair(self) -> bool:
        """gc+dc measured against a frozen teacher; needs all four term vectors."""
        return (
            "gc" in self.active_losses
            and "dc" in self.active_losses
            and self.keep_teacher_generator
        )

    @property
    def uses_own_losses(self) -> bool:
        """gc/dc rows without a teacher: plain fine-tuning on the model's own losses."""
        return (
            "gc" in self.active_losses
            and "dc" in self.active_losses
            and not self.keep_teacher_generator
        )

    @property
    def uses_standard_generator_loss(self) -> bool:
        return ("go" in self.active_losses and self.has_discriminator) or self.uses_own_losses

    @property
    def discriminator_trains(self) -> bool:
        if not self.has_discriminator or self.discriminator_fixed:
            return False
        return "do" in self.active_losses or self.uses_own_losses

    def required_vectors(self) -> frozenset:
        """Term-vector names compose_objectives is allowed to read."""
        need = set()
        if self.uses_consistency_pair:
            need |= {"teacher_gen", "student_gen", "teacher_disc", "student_disc"}
        if self.uses_standard_generator_loss:
            need.add("student_gen")
        if self.discriminator_trains:
            need.add("student_disc")
        if self.extra != EXTRA_NONE:
            need.add("extra")
        return frozenset(need)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["active_losses"] = sorted(self.active_losses)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        d = dict(d)
        d["active_losses"] = frozenset(d["active_losses"])
        return cls(**d)


def _recipe(recipe_id, label, *, g_init, g_pruned, teacher, d_init, d_fixed=False,
            d_pruned=False, losses=(), extra=EXTRA_NONE, regime=None,
            width=None, notes=""):
    return StrategyConfig(
        recipe_id=recipe_id,
        label=label,
        student_generator_init=g_init,
        student_generator_pruned=g_pruned,
        keep_teacher_generator=teacher,
        discriminator_init=d_init,
        discriminator_fixed=d_fixed,
        discriminator_pruned=d_pruned,
        active_losses=frozenset(losses),
        extra=extra,
        pruning_regime=regime,
        width_param_fraction=width,
        notes=notes,
    )


_REGISTRY = {
    "a": _recipe(
        "a", "dense baseline (no compression)",
        g_init="random", g_pruned=False, teacher=False, d_init="random",
        losses=("go", "do"),
        notes="Standard adversarial training of the full-size model from scratch.",
    ),
    "b": _recipe(
        "b", "consistency against frozen teacher + pretrained discriminator",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="pretrained",
        losses=("gc", "dc", "go", "do"), regime="gradual",
        notes="Student starts from the dense weights; gc+dc anchor it to the "
              "teacher's loss values while go/do keep adversarial training alive.",
    ),
    "c": _recipe(
        "c", "small dense network, trained from scratch",
        g_init="random", g_pruned=False, teacher=False, d_init="random",
        losses=("go", "do"), width=0.5,
        notes="Channel widths scaled so the generator has ~50% of the dense "
              "parameter count; no pruning involved.",
    ),
    "d": _recipe(
        "d", "one-shot prune, then fine-tune",
        g_init="from_dense", g_pruned=True, teacher=False, d_init="pretrained",
        losses=("gc", "dc"), regime="one_shot",
        notes="gc/dc read as the pruned model's own standard losses (no teacher "
              "exists to compare against); plain GAN fine-tuning after a single "
              "magnitude prune.",
    ),
    "e": _recipe(
        "e", "gradual prune while fine-tuning",
        g_init="from_dense", g_pruned=True, teacher=False, d_init="random",
        losses=("gc", "dc"), regime="gradual",
        notes="Same own-loss reading as (d), but sparsity ramps up gradually and "
              "the discriminator restarts from random weights.",
    ),
    "f": _recipe(
        "f", "gradual prune during from-scratch training",
        g_init="random", g_pruned=True, teacher=False, d_init="random",
        losses=("gc", "dc"), regime="gradual",
        notes="Own-loss reading again; generator never sees the dense weights.",
    ),
    "g": _recipe(
        "g", "one-shot prune + output distillation",
        g_init="from_dense", g_pruned=True, teacher=True, d_init=None,
        losses=("gc", "go"), extra=EXTRA_OUTPUT, regime="one_shot",
        notes="No discriminator at all, so no adversarial term is computable; "
              "the training signal is the squared distance between student and "
              "teacher outputs.",
    ),
    "h": _recipe(
        "h", "gradual prune + output distillation + fine-tuning",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="pretrained",
        losses=("gc", "dc", "go"), extra=EXTRA_OUTPUT, regime="gradual",
        notes="Consistency pair plus the student's own generator loss plus output "
              "distillation; the discriminator stays at its pretrained weights "
              "(no do term, so it never updates).",
    ),
    "i": _recipe(
        "i", "consistency only, discriminator frozen",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="pretrained",
        d_fixed=True, losses=("gc", "dc"), regime="gradual",
        notes="Pure consistency training against a frozen pretrained discriminator.",
    ),
    "j": _recipe(
        "j", "adversarial learning with a fresh discriminator",
        g_init="random", g_pruned=True, teacher=True, d_init="random",
        losses=("gc", "dc", "go", "do"), regime="gradual",
        notes="Like (b) but the student starts from random weights and the "
              "discriminator is trained from scratch alongside it.",
    ),
    "k": _recipe(
        "k", "output distillation + adversarial training, fresh discriminator",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="random",
        losses=("gc", "go", "do"), extra=EXTRA_OUTPUT, regime="gradual",
        notes="Teacher outputs are distilled but the pretrained discriminator is "
              "not reused; a new one trains from scratch.",
    ),
    "l": _recipe(
        "l", "intermediate-activation distillation",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="pretrained",
        d_fixed=True, losses=(), extra=EXTRA_INTERMEDIATE, regime="gradual",
        notes="Stand-in: squared distance on one named hidden activation of "
              "teacher vs student; no adversarial or consistency terms.",
    ),
    "m": _recipe(
        "m", "sparse pretrained discriminator (init/loss configuration only)",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="pretrained_sparse",
        d_pruned=True, losses=("gc", "dc", "go"), regime="gradual",
        notes="Only the row's initialization and loss wiring is reproduced; the "
              "expectation-maximization training procedure it originally came "
              "with is out of scope.",
    ),
    "n": _recipe(
        "n", "prune generator and discriminator together",
        g_init="from_dense", g_pruned=True, teacher=True, d_init="pretrained_sparse",
        d_pruned=True, losses=("gc", "dc", "go"), regime="gradual",
        notes="Discriminator weights are masked on the same schedule as the "
              "generator's; with no do term it never updates, so its masks come "
              "from the fixed pretrained magnitudes.",
    ),
}


def _validate_registry():
    for rid, cfg in _REGISTRY.items():
        if cfg.recipe_id != rid:
            raise ValidationError(f"registry key {rid} != recipe_id {cfg.recipe_id}")
        if cfg.uses_consistency_pair and not (cfg.keep_teacher_generator and cfg.has_discriminator):
            raise ValidationError(f"recipe {rid}: consistency pair needs teacher and discriminator")
        if cfg.student_generator_pruned and cfg.pruning_regime is None:
            raise ValidationError(f"recipe {rid}: pruned student needs a pruning regime")
        if not cfg.student_generator_pruned and cfg.pruning_regime is not None:
            raise ValidationError(f"recipe {rid}: regime set but student not pruned")
        if cfg.discriminator_pruned and cfg.discriminator_init != "pretrained_sparse":
            raise ValidationError(f"recipe {rid}: pruned discriminator must be pretrained_sparse")
        if cfg.width_param_fraction is not None and (
            cfg.keep_teacher_generator or cfg.student_generator_init != "random"
        ):
            raise ValidationError(f"recipe {rid}: width scaling only fits from-scratch training")


_validate_registry()


def resolve_strategy(recipe_id: str) -> StrategyConfig:
    """Look up one recipe by its id ("a".."n")."""
    if recipe_id not in _REGISTRY:
        raise ValidationError(
            f"unknown recipe '{recipe_id}' (expected one of {', '.join(RECIPE_IDS)})"
        )
    return _REGISTRY[recipe_id]


def all_strategies() -> list[StrategyConfig]:
    return [_REGISTRY[r] for r in RECIPE_IDS]


@dataclass(frozen=True)
class ComposedObjectives:
    """Scalar objectives for one step, plus named components for logging."""

    generator: object                  # float or 0-dim tensor
    discriminator: object | None       # None when the discriminator never updates
    components: dict = field(default_factory=dict)


def _standard_total(terms: dict):
    """A model's own training loss: the unweighted sum of its term vector."""
    total = 0.0
    for v in terms.values():
        total = total + v
    return total


def generator_objective(config: StrategyConfig, term_values: dict, weights: ConsistencyWeights):
    """Generator-side objective for one batch.

    ``term_values`` maps vector names (teacher_gen, student_gen, teacher_disc,
    student_disc, extra) to term dicts; only the vectors the config activates
    are read.  Returns (objective, components).
    """
    components = {}
    total = 0.0
    if config.uses_consistency_pair:
        for name in ("teacher_gen", "student_gen", "teacher_disc", "student_disc"):
            if name not in term_values:
                raise ValidationError(f"recipe {config.recipe_id}: missing term vector '{name}'")
        l_gc = generative_consistency(
            term_values["teacher_gen"], term_values["student_gen"], weights
        )
        l_dc = discriminative_consistency(
            term_values["teacher_disc"], term_values["student_disc"], weights
        )
        combined = overall_loss(l_gc, l_dc, weights.lam)
        components["l_gc"] = l_gc
        components["l_dc"] = l_dc
        components["l_overall"] = combined
        total = total + combined
    if config.uses_standard_generator_loss:
        if "student_gen" not in term_values:
            raise ValidationError(f"recipe {config.recipe_id}: missing term vector 'student_gen'")
        own = _standard_total(term_values["student_gen"])
        components["student_gen_total"] = own
        total = total + own
    if config.extra != EXTRA_NONE:
        if "extra" not in term_values:
            raise ValidationError(f"recipe {config.recipe_id}: missing term vector 'extra'")
        extra = _standard_total(term_values["extra"])
        components[config.extra] = extra
        total = total + extra
    return total, components


def discriminator_objective(config: StrategyConfig, term_values: dict):
    """Discriminator-side objective (its standard loss on student fakes), or None."""
    if not config.discriminator_trains:
        return None
    if "student_disc" not in term_values:
        raise ValidationError(f"recipe {config.recipe_id}: missing term vector 'student_disc'")
    return _standard_total(term_values["student_disc"])


def compose_objectives(config: StrategyConfig, term_values: dict,
                       weights: ConsistencyWeights) -> ComposedObjectives:
    """Both objectives from one set of term vectors (see generator_objective)."""
    gen, components = generator_objective(config, term_values, weights)
    disc = discriminator_objective(config, term_values)
    return ComposedObjectives(generator=gen, discriminator=disc, components=components)
