import pytest
import torch

from gancompress.errors import ValidationError
from gancompress.losses import ConsistencyWeights
from gancompress.strategies import (
    EXTRA_INTERMEDIATE,
    EXTRA_NONE,
    EXTRA_OUTPUT,
    RECIPE_IDS,
    StrategyConfig,
    all_strategies,
    compose_objectives,
    discriminator_objective,
    generator_objective,
    resolve_strategy,
)


def unit_weights(lam=0.5):
    return ConsistencyWeights(generative_weights={"gen": 1.0},
                              discriminative_weights={"dis": 1.0}, lam=lam)


class RecordingTerms(dict):
    """Term-vector map that records which vectors were read."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.reads = set()

    def __getitem__(self, key):
        self.reads.add(key)
        return super().__getitem__(key)


def full_term_values():
    return RecordingTerms({
        "teacher_gen": {"gen": 1.5},
        "student_gen": {"gen": 2.0},
        "teacher_disc": {"dis": 0.8},
        "student_disc": {"dis": 1.0},
        "extra": {"output_mse": 0.3},
    })


class TestResolve:
    def test_dense_baseline_row(self):
        cfg = resolve_strategy("a")
        assert cfg.active_losses == frozenset({"go", "do"})
        assert cfg.student_generator_init == "random"
        assert not cfg.student_generator_pruned
        assert cfg.discriminator_init == "random"
        assert not cfg.keep_teacher_generator

    def test_consistency_row(self):
        cfg = resolve_strategy("b")
        assert cfg.active_losses == frozenset({"gc", "dc", "go", "do"})
        assert cfg.discriminator_init == "pretrained"
        assert not cfg.discriminator_fixed
        assert cfg.keep_teacher_generator
        assert cfg.student_generator_init == "from_dense"

    def test_fixed_discriminator_row(self):
        cfg = resolve_strategy("i")
        assert cfg.discriminator_fixed
        assert cfg.active_losses == frozenset({"gc", "dc"})
        assert not cfg.discriminator_trains

    def test_both_pruned_row(self):
        cfg = resolve_strategy("n")
        assert cfg.discriminator_pruned
        assert cfg.discriminator_init == "pretrained_sparse"

    def test_small_dense_row_carries_width_target(self):
        assert resolve_strategy("c").width_param_fraction == 0.5

    def test_total_and_deterministic(self):
        for rid in RECIPE_IDS:
            assert resolve_strategy(rid).recipe_id == rid
        assert len(all_strategies()) == 14

    def test_unknown_recipe_rejected(self):
        with pytest.raises(ValidationError, match="z"):
            resolve_strategy("z")

    def test_config_round_trips_through_serialization(self):
        for rid in RECIPE_IDS:
            cfg = resolve_strategy(rid)
            assert StrategyConfig.from_dict(cfg.to_dict()) == cfg


class TestCompose:
    def test_matching_terms_reduce_to_standard_loss(self):
        """Consistency part vanishes when the student matches the teacher."""
        cfg = resolve_strategy("b")
        terms = RecordingTerms({
            "teacher_gen": {"gen": 1.5}, "student_gen": {"gen": 1.5},
            "teacher_disc": {"dis": 0.8}, "student_disc": {"dis": 0.8},
        })
        out = compose_objectives(cfg, terms, unit_weights())
        assert out.components["l_gc"] == 0.0
        assert out.components["l_dc"] == 0.0
        assert out.generator == terms["student_gen"]["gen"]
        assert out.discriminator == terms["student_disc"]["dis"]

    def test_consistency_pair_combines_at_lambda(self):
        cfg = resolve_strategy("i")
        terms = {
            "teacher_gen": {"gen": 2.0}, "student_gen": {"gen": 3.0},
            "teacher_disc": {"dis": 1.0}, "student_disc": {"dis": 1.2},
        }
        out = compose_objectives(cfg, terms, unit_weights(lam=0.5))
        assert out.components["l_gc"] == pytest.approx(0.5, abs=1e-12)
        assert out.components["l_dc"] == pytest.approx(0.2, abs=1e-12)
        assert out.generator == pytest.approx(0.6, abs=1e-12)
        assert out.discriminator is None

    def test_fine_tune_row_uses_own_losses_only(self):
        cfg = resolve_strategy("d")
        terms = RecordingTerms({"student_gen": {"gen": 2.0}, "student_disc": {"dis": 1.1}})
        out = compose_objectives(cfg, terms, unit_weights())
        assert out.generator == 2.0
        assert out.discriminator == 1.1
        assert "l_gc" not in out.components

    def test_dense_baseline_reduces_to_standard_gan_objectives(self):
        cfg = resolve_strategy("a")
        terms = RecordingTerms({"student_gen": {"gen": 0.9}, "student_disc": {"dis": 1.4}})
        out = compose_objectives(cfg, terms, unit_weights())
        assert out.generator == 0.9
        assert out.discriminator == 1.4
        assert terms.reads == {"student_gen", "student_disc"}

    def test_distill_only_row_trains_on_the_extra_term(self):
        cfg = resolve_strategy("g")
        terms = RecordingTerms({"extra": {"output_mse": 0.3}})
        out = compose_objectives(cfg, terms, unit_weights())
        assert out.generator == 0.3
        assert out.discriminator is None
        assert terms.reads == {"extra"}

    @pytest.mark.parametrize("rid", list(RECIPE_IDS))
    def test_reads_only_required_vectors(self, rid):
        cfg = resolve_strategy(rid)
        terms = full_term_values()
        compose_objectives(cfg, terms, unit_weights())
        assert terms.reads <= cfg.required_vectors()

    @pytest.mark.parametrize("rid", list(RECIPE_IDS))
    def test_required_vectors_are_sufficient(self, rid):
        cfg = resolve_strategy(rid)
        everything = full_term_values()
        trimmed = RecordingTerms({k: everything[k] for k in cfg.required_vectors()})
        out = compose_objectives(cfg, trimmed, unit_weights())
        assert out.generator is not None

    def test_missing_vector_reported(self):
        cfg = resolve_strategy("b")
        with pytest.raises(ValidationError, match="teacher_disc"):
            generator_objective(cfg, {"teacher_gen": {"gen": 1.0},
                                      "student_gen": {"gen": 1.0}}, unit_weights())

    def test_discriminator_objective_none_when_fixed(self):
        assert discriminator_objective(resolve_strategy("i"), {}) is None

    def test_discriminator_objective_none_without_do_term(self):
        # rows h/m/n list no discriminator loss, so it never updates
        for rid in ("h", "m", "n"):
            assert discriminator_objective(resolve_strategy(rid), {}) is None

    def test_intermediate_distill_row(self):
        cfg = resolve_strategy("l")
        assert cfg.extra == EXTRA_INTERMEDIATE
        terms = RecordingTerms({"extra": {"intermediate_mse": 0.7}})
        out = compose_objectives(cfg, terms, unit_weights())
        assert out.generator == 0.7

    def test_differentiable_composition(self):
        cfg = resolve_strategy("b")
        s_gen = torch.tensor(2.0, dtype=torch.float64, requires_grad=True)
        s_dis = torch.tensor(1.2, dtype=torch.float64, requires_grad=True)
        terms = {
            "teacher_gen": {"gen": 1.5}, "student_gen": {"gen": s_gen * 1.0},
            "teacher_disc": {"dis": 0.8}, "student_disc": {"dis": s_dis * 1.0},
        }
        out = compose_objectives(cfg, terms, unit_weights())
        out.generator.backward()
        assert s_gen.grad is not None
        assert s_dis.grad is not None


class TestExtrasTable:
    def test_extras_assigned_to_distillation_rows_only(self):
        for rid in RECIPE_IDS:
            cfg = resolve_strategy(rid)
            if rid in ("g", "h", "k"):
                assert cfg.extra == EXTRA_OUTPUT
            elif rid == "l":
                assert cfg.extra == EXTRA_INTERMEDIATE
            else:
                assert cfg.extra == EXTRA_NONE
