import pytest

from gancompress.errors import ValidationError
from gancompress.schedule import SparsitySchedule


@pytest.fixture()
def ramp():
    return SparsitySchedule.gradual(0.05, 0.50, 0, 100)


class TestGradual:
    def test_start_is_exactly_initial(self, ramp):
        assert ramp.sparsity_at(0) == 0.05

    def test_end_and_beyond_is_exactly_final(self, ramp):
        assert ramp.sparsity_at(100) == 0.50
        assert ramp.sparsity_at(101) == 0.50
        assert ramp.sparsity_at(10_000) == 0.50

    def test_midpoint_of_cubic(self, ramp):
        # s(50) = 0.5 + (0.05 - 0.5) * (1 - 0.5)^3
        assert ramp.sparsity_at(50) == pytest.approx(0.44375, abs=1e-12)

    def test_monotone_on_dense_grid(self, ramp):
        values = [ramp.sparsity_at(t) for t in range(1001)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_range_stays_within_bounds(self, ramp):
        for t in range(0, 150):
            assert 0.05 <= ramp.sparsity_at(t) <= 0.50

    def test_before_begin_equals_initial(self):
        s = SparsitySchedule.gradual(0.1, 0.6, 50, 150)
        for t in (0, 10, 50):
            assert s.sparsity_at(t) == 0.1

    def test_flat_schedule_allowed(self):
        s = SparsitySchedule.gradual(0.3, 0.3, 0, 10)
        assert s.sparsity_at(5) == 0.3


class TestOneShot:
    def test_jumps_at_begin(self):
        s = SparsitySchedule.one_shot(0.5, at_step=10, horizon=100)
        assert s.sparsity_at(9) == 0.0
        assert s.sparsity_at(10) == 0.5
        assert s.sparsity_at(99) == 0.5

    def test_updates_only_once(self):
        s = SparsitySchedule.one_shot(0.5, at_step=0, horizon=100)
        updates = [t for t in range(200) if s.should_update_mask(t)]
        assert updates == [0]

    def test_mismatched_endpoints_rejected(self):
        with pytest.raises(ValidationError):
            SparsitySchedule("one_shot", 0.1, 0.5, 0, 10)


class TestShouldUpdate:
    def test_on_interval(self):
        s = SparsitySchedule.gradual(0.05, 0.5, 0, 100, update_interval=10)
        assert s.should_update_mask(20) is True

    def test_off_interval(self):
        s = SparsitySchedule.gradual(0.05, 0.5, 0, 100, update_interval=10)
        assert s.should_update_mask(21) is False

    def test_after_end(self):
        s = SparsitySchedule.gradual(0.05, 0.5, 0, 100, update_interval=10)
        assert s.should_update_mask(110) is False

    def test_offset_begin(self):
        s = SparsitySchedule.gradual(0.05, 0.5, 7, 107, update_interval=5)
        assert s.should_update_mask(7)
        assert s.should_update_mask(12)
        assert not s.should_update_mask(13)
        assert not s.should_update_mask(2)


class TestValidation:
    def test_initial_above_final_rejected(self):
        with pytest.raises(ValidationError):
            SparsitySchedule.gradual(0.6, 0.5, 0, 10)

    def test_bad_window_rejected(self):
        with pytest.raises(ValidationError):
            SparsitySchedule.gradual(0.0, 0.5, 10, 10)

    def test_bad_interval_rejected(self):
        with pytest.raises(ValidationError):
            SparsitySchedule.gradual(0.0, 0.5, 0, 10, update_interval=0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            SparsitySchedule("linear", 0.0, 0.5, 0, 10)
