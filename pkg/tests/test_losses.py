import pytest
import torch

from gancompress.errors import NumericError, ValidationError
from gancompress.losses import (
    ConsistencyWeights,
    assert_finite_terms,
    discriminative_consistency,
    generative_consistency,
    normalized_term_distance,
    overall_loss,
)


def weights(gen=None, disc=None, lam=0.5, epsilon=1e-8):
    return ConsistencyWeights(
        generative_weights=gen or {"gen": 1.0, "cla": 1.0, "rec": 10.0},
        discriminative_weights=disc or {"dis": 1.0, "gp": 10.0},
        lam=lam, epsilon=epsilon,
    )


class TestNormalizedDistance:
    def test_basic_ratio(self):
        assert normalized_term_distance(2.0, 3.0, 1e-8) == 0.5

    def test_zero_at_equality(self):
        for x in (-3.7, 0.25, 1e6):
            assert normalized_term_distance(x, x, 1e-8) == 0.0

    def test_epsilon_guards_zero_teacher(self):
        assert normalized_term_distance(0.0, 0.5, 1e-8) == 0.5 / 1e-8

    def test_scale_invariance(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(200):
            t = float(torch.empty(1).uniform_(0.1, 5.0, generator=g))
            s = float(torch.empty(1).uniform_(-5.0, 5.0, generator=g))
            base = normalized_term_distance(t, s)
            for c in (0.1, 10.0):
                assert normalized_term_distance(c * t, c * s) == pytest.approx(base, abs=1e-12)


class TestGenerativeConsistency:
    def test_hand_evaluated_three_term_case(self):
        teacher = {"gen": 2.0, "cla": 1.0, "rec": 0.5}
        student = {"gen": 3.0, "cla": 1.0, "rec": 0.6}
        value = generative_consistency(teacher, student, weights())
        # 1*0.5 + 1*0 + 10*(0.1/0.5)
        assert value == pytest.approx(2.5, abs=1e-12)

    def test_zero_when_student_matches_teacher(self):
        terms = {"gen": 1.3, "cla": 0.2, "rec": 4.0}
        assert generative_consistency(terms, dict(terms), weights()) == 0.0

    def test_single_term_reduces_to_distance(self):
        w = weights(gen={"gen": 1.0})
        assert generative_consistency({"gen": 2.0}, {"gen": 3.0}, w) == \
            normalized_term_distance(2.0, 3.0)

    def test_term_set_mismatch_lists_names(self):
        with pytest.raises(ValidationError, match="rec"):
            generative_consistency({"gen": 1.0, "rec": 2.0}, {"gen": 1.0}, weights())

    def test_missing_weight_rejected(self):
        with pytest.raises(ValidationError, match="aux"):
            generative_consistency({"aux": 1.0}, {"aux": 2.0}, weights())


class TestDiscriminativeConsistency:
    def test_hand_evaluated_two_term_case(self):
        teacher = {"dis": 1.0, "gp": 2.0}
        student = {"dis": 1.2, "gp": 2.0}
        value = discriminative_consistency(teacher, student, weights())
        assert value == pytest.approx(0.2, abs=1e-12)

    def test_zero_when_student_matches_teacher(self):
        terms = {"dis": 0.9, "gp": 5.0}
        assert discriminative_consistency(terms, dict(terms), weights()) == 0.0

    def test_zero_gp_weight_leaves_dis_only(self):
        w = weights(disc={"dis": 1.0, "gp": 0.0})
        value = discriminative_consistency({"dis": 1.0, "gp": 2.0},
                                           {"dis": 1.5, "gp": 7.0}, w)
        assert value == pytest.approx(0.5, abs=1e-12)


class TestOverallLoss:
    def test_weighted_sum(self):
        assert overall_loss(2.5, 1.0, 0.5) == 3.0

    def test_zero_inputs(self):
        assert overall_loss(0.0, 0.0, 0.7) == 0.0

    def test_lambda_zero_drops_discriminative_part(self):
        assert overall_loss(1.25, 99.0, 0.0) == 1.25

    def test_affine_in_lambda(self):
        l_gc, l_dc = 0.75, 2.5
        v0 = overall_loss(l_gc, l_dc, 0.0)
        v1 = overall_loss(l_gc, l_dc, 1.0)
        v2 = overall_loss(l_gc, l_dc, 2.0)
        assert v1 - v0 == pytest.approx(l_dc, abs=1e-12)
        assert v2 - v1 == pytest.approx(l_dc, abs=1e-12)


class TestProperties:
    def test_non_negative_on_random_term_vectors(self):
        g = torch.Generator().manual_seed(42)
        w = weights()
        names = ("gen", "cla", "rec")
        for _ in range(10_000):
            vals = torch.empty(6).uniform_(-10, 10, generator=g).tolist()
            teacher = dict(zip(names, vals[:3]))
            student = dict(zip(names, vals[3:]))
            assert generative_consistency(teacher, student, w) >= 0.0

    def test_zero_iff_match_for_nonzero_teacher(self):
        w = weights(gen={"gen": 1.0, "cla": 2.0})
        teacher = {"gen": 1.0, "cla": -2.0}
        assert generative_consistency(teacher, dict(teacher), w) == 0.0
        for bumped in ({"gen": 1.0 + 1e-9, "cla": -2.0}, {"gen": 1.0, "cla": -2.0 - 1e-9}):
            assert generative_consistency(teacher, bumped, w) > 0.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValidationError):
            weights(gen={"gen": -1.0})

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValidationError):
            weights(lam=-0.1)

    def test_finite_check_names_the_term(self):
        with pytest.raises(NumericError, match="student_gen.rec"):
            assert_finite_terms({"gen": 1.0, "rec": float("inf")}, "student_gen")


class TestDifferentiability:
    def test_gradient_matches_central_differences(self):
        """Composed loss vs finite differences on a 2-parameter student."""
        lam = 0.5
        w = weights(gen={"gen": 1.0}, disc={"dis": 1.0}, lam=lam)
        teacher_gen = {"gen": 1.3}
        teacher_dis = {"dis": 0.7}

        def student_terms(a, b):
            # smooth, everywhere-positive stand-ins for loss values
            gen = torch.nn.functional.softplus(a * 1.7 + b * 0.3) + 0.1
            dis = torch.sigmoid(a - 2.0 * b) + 0.2
            return {"gen": gen}, {"dis": dis}

        def loss_value(a, b):
            gen_t, dis_t = student_terms(a, b)
            l_gc = generative_consistency(teacher_gen, gen_t, w)
            l_dc = discriminative_consistency(teacher_dis, dis_t, w)
            return overall_loss(l_gc, l_dc, lam)

        a = torch.tensor(0.35, dtype=torch.float64, requires_grad=True)
        b = torch.tensor(-0.8, dtype=torch.float64, requires_grad=True)
        loss = loss_value(a, b)
        loss.backward()

        h = 1e-6
        for p, grad in ((a, a.grad), (b, b.grad)):
            with torch.no_grad():
                base = p.item()
                bump = lambda q, v: torch.tensor(v, dtype=torch.float64) if q is p else q.detach()
                plus = loss_value(bump(a, base + h), bump(b, base + h))
                minus = loss_value(bump(a, base - h), bump(b, base - h))
            numeric = (float(plus) - float(minus)) / (2 * h)
            assert float(grad) == pytest.approx(numeric, rel=1e-4)

    def test_teacher_values_carry_no_gradient(self):
        w = weights(gen={"gen": 1.0})
        t = torch.tensor(2.0, requires_grad=True)
        s = torch.tensor(3.0, requires_grad=True)
        value = generative_consistency({"gen": t}, {"gen": s}, w)
        value.backward()
        assert t.grad is None
        assert s.grad is not None
