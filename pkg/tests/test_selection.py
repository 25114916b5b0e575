import numpy as np
import pytest

from agents.bert_pin.encoder import ModelConfig, init_params
from agents.bert_pin.selection import (
    SelectionConfig,
    combine_candidates,
    direct_top2,
    find_fork_points,
    iterative_top2,
    pocp,
    probability_gaps,
    select_candidates,
)
from core_numerics.errors import ConfigError, DataError, ShapeError
from load_data.windows import MaskedWindow

C = 8


def _row(top, top_p=0.65, second=None, second_p=0.0):
    rest = C - 1 - (second is not None)
    row = np.full(C, (1.0 - top_p - second_p) / rest)
    row[top] = top_p
    if second is not None:
        row[second] = second_p
    return row


def _hand_distribution():
    """16×8 matrix whose fork points sit at 5 (left) and 10 (right) for e = 0.3."""
    probs = np.stack([_row(1) for _ in range(16)])
    probs[4] = _row(3)
    probs[5] = _row(2, 0.4, second=5, second_p=0.35)
    probs[10] = _row(1, 0.4, second=6, second_p=0.3)
    probs[11] = _row(4)
    return probs


class RecordingPredictor:
    def __init__(self, probs):
        self.probs = probs
        self.calls = []

    def __call__(self, load_cls, temp_cls):
        self.calls.append((load_cls.copy(), temp_cls.copy()))
        return self.probs


def _config(n=16):
    return ModelConfig(classes=C, hidden=8, heads=2, layers=1, dropout=0.0, window_len=n)


def _fork_oracle(gaps, ts, te, e):
    half = (te - ts) // 2
    left = [t for t in range(ts, ts + half + 1) if gaps[t] < e]
    right = [t for t in range(te, te - half - 1, -1) if gaps[t] < e]
    return (left[0] if left else None, right[0] if right else None)


class TestDirectTop2:
    def test_masked_positions_take_second_class(self):
        probs = np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.2, 0.2, 0.6]])
        result = direct_top2(probs, np.array([0, 1, 0]))
        np.testing.assert_array_equal(result.top1_classes, [1, 0, 2])
        np.testing.assert_array_equal(result.top2_classes, [2, 0, 0])

    def test_ties_go_to_lower_class(self):
        result = direct_top2(np.array([[0.4, 0.4, 0.2]]), np.array([0]))
        assert result.top1_classes[0] == 0
        assert result.top2_classes[0] == 1

    def test_needs_two_classes(self):
        with pytest.raises(ShapeError):
            direct_top2(np.ones((3, 1)), np.zeros(3))


class TestForkPoints:
    def test_small_example(self):
        probs = np.array([[0.8, 0.2], [0.7, 0.3], [0.7, 0.3], [0.8, 0.2]])
        assert find_fork_points(probs, (0, 3), e=0.5) == (1, 2)

    def test_no_fork_when_gaps_are_wide(self):
        probs = np.tile([0.9, 0.1], (6, 1))
        assert find_fork_points(probs, (0, 5), e=0.5) == (None, None)

    def test_matches_scan_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 20))
            probs = rng.dirichlet(np.ones(5), size=n)
            ts = int(rng.integers(0, n))
            te = int(rng.integers(ts, n))
            e = float(rng.uniform(0.0, 1.0))
            gaps = probability_gaps(probs)
            assert find_fork_points(probs, (ts, te), e) == _fork_oracle(gaps, ts, te, e)

    def test_larger_threshold_forks_no_later(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            probs = rng.dirichlet(np.ones(4), size=12)
            small = find_fork_points(probs, (2, 10), 0.2)
            large = find_fork_points(probs, (2, 10), 0.6)
            if small[0] is not None:
                assert large[0] is not None and large[0] <= small[0]
            if small[1] is not None:
                assert large[1] is not None and large[1] >= small[1]

    def test_segment_outside_window(self):
        with pytest.raises(ShapeError):
            find_fork_points(np.full((4, 2), 0.5), (2, 4), 0.5)


class TestIterativeTop2:
    def test_hand_trace(self, rng, window_factory):
        window = window_factory(rng, 16, hole=(4, 12), margin=4)
        predictor = RecordingPredictor(_hand_distribution())
        result = iterative_top2(window, None, _config(), SelectionConfig(e=0.3), predictor)

        assert (result.fork_left, result.fork_right) == (5, 10)
        expected = {4: 3, 5: 5, 6: 3, 7: 3, 8: 4, 9: 4, 10: 6, 11: 4}
        assert {t: int(result.top2_classes[t]) for t in range(4, 12)} == expected
        outside = np.r_[0:4, 12:16]
        np.testing.assert_array_equal(result.top2_classes[outside], result.top1_classes[outside])
        assert len(predictor.calls) == 5

    def test_refill_puts_target_at_segment_edge(self, rng, window_factory):
        window = window_factory(rng, 16, hole=(4, 12), margin=4)
        predictor = RecordingPredictor(_hand_distribution())
        iterative_top2(window, None, _config(), SelectionConfig(e=0.3), predictor)

        shifted_left, _ = predictor.calls[1]
        # shifted by 2: slot 4 holds window position 6, slots 2-3 the fixed fork side
        np.testing.assert_array_equal(shifted_left[2:4], [3, 5])
        np.testing.assert_array_equal(shifted_left[4:10], 0)
        shifted_right, _ = predictor.calls[3]
        # shifted by -2: slot 11 holds window position 9, slots 12-13 the fixed fork side
        np.testing.assert_array_equal(shifted_right[12:14], [6, 4])
        np.testing.assert_array_equal(shifted_right[6:12], 0)

    def test_zero_threshold_is_top1(self, rng, window_factory):
        window = window_factory(rng, 16, hole=(4, 12), margin=4)
        predictor = RecordingPredictor(_hand_distribution())
        result = iterative_top2(window, None, _config(), SelectionConfig(e=0.0), predictor)
        np.testing.assert_array_equal(result.top2_classes, result.top1_classes)
        assert (result.fork_left, result.fork_right) == (None, None)
        assert len(predictor.calls) == 1

    def test_short_margins_need_padding(self, rng, window_factory):
        window = window_factory(rng, 16, hole=(4, 12), margin=2)
        predictor = RecordingPredictor(_hand_distribution())
        with pytest.raises(DataError, match="margin"):
            iterative_top2(window, None, _config(), SelectionConfig(e=0.3), predictor)
        result = iterative_top2(window, None, _config(), SelectionConfig(e=0.3, edge_padding=True), predictor)
        assert result.fork_left == 5

    def test_with_real_model(self, rng, window_factory):
        config = _config()
        params = init_params(config, seed=0, std=0.5)
        window = window_factory(rng, 16, hole=(4, 12), margin=4)
        result = select_candidates(window, params, config, SelectionConfig(e=1.0))
        assert result.top2_classes.shape == (16,)
        assert result.forks[0].segment_start == 4 and result.forks[0].segment_end == 11

    def test_needs_params_or_predictor(self, rng, window_factory):
        with pytest.raises(ConfigError):
            iterative_top2(window_factory(rng, 16, hole=(4, 12), margin=4), None, _config(), SelectionConfig())

    def test_touching_segments_fork_separately(self, rng, window_factory):
        merged = window_factory(rng, 16, hole=(4, 12), margin=4)
        window = MaskedWindow(merged.window, merged.mask, intervals=((4, 8), (8, 12)))
        predictor = RecordingPredictor(_hand_distribution())
        result = iterative_top2(window, None, _config(), SelectionConfig(e=0.3), predictor)
        assert [(f.segment_start, f.segment_end) for f in result.forks] == [(4, 7), (8, 11)]
        direct = select_candidates(
            window, None, _config(), SelectionConfig(method="direct_top2"), RecordingPredictor(_hand_distribution())
        )
        assert len(direct.forks) == 2


class TestSelectCandidates:
    def test_top1_method(self, rng, window_factory):
        window = window_factory(rng, 16, hole=(4, 12))
        result = select_candidates(
            window, None, _config(), SelectionConfig(method="top1"), RecordingPredictor(_hand_distribution())
        )
        np.testing.assert_array_equal(result.top2_classes, result.top1_classes)

    def test_direct_top2_method(self, rng, window_factory):
        window = window_factory(rng, 16, hole=(4, 12))
        result = select_candidates(
            window, None, _config(), SelectionConfig(method="direct_top2"),
            RecordingPredictor(_hand_distribution()),
        )
        assert result.top2_classes[5] == 5
        assert result.top2_classes[0] == result.top1_classes[0]

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            SelectionConfig(e=1.5)


class TestCombine:
    def test_closer_candidate_wins(self):
        np.testing.assert_array_equal(
            combine_candidates([10.0, 10.5], [9.0, 12.0], [9.0, 10.5]), [9.0, 10.5]
        )

    def test_ties_keep_top1(self):
        np.testing.assert_array_equal(combine_candidates([9.0], [11.0], [10.0]), [9.0])

    def test_pocp(self):
        top1 = np.array([10.0, 10.0, 10.0, 10.0, 5.0])
        top2 = np.array([9.0, 11.0, 10.0, 12.0, 0.0])
        truth = np.array([9.0, 9.0, 10.0, 10.0, 0.0])
        assert pocp(top1, top2, truth, np.array([0, 0, 0, 0, 1])) == 25.0

    def test_pocp_needs_masked_points(self):
        with pytest.raises(DataError):
            pocp(np.ones(2), np.ones(2), np.ones(2), np.ones(2))

    def test_pocp_bounds(self, rng):
        truth = rng.uniform(1.0, 2.0, 8)
        top1 = truth + 0.5
        mask = np.array([1, 0, 0, 0, 1, 0, 0, 1])
        assert pocp(top1, top1, truth, mask) == 0.0
        assert pocp(top1, truth, truth, mask) == 100.0


class TestDegeneracy:
    def test_zero_threshold_matches_top1_on_random_matrices(self, window_factory):
        rng = np.random.default_rng(42)
        config = _config()
        for case in range(1000):
            probs = rng.dirichlet(np.ones(C), size=16)
            start = int(rng.integers(0, 12))
            end = int(rng.integers(start + 1, 17))
            window = window_factory(rng, 16, hole=(start, end), margin=8, window_id=case)
            result = iterative_top2(window, None, config, SelectionConfig(e=0.0), RecordingPredictor(probs))
            np.testing.assert_array_equal(result.top2_classes, np.argmax(probs, axis=1))
