import csv
import logging
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcsnn.bayes import (REPORT_COLUMNS, PredictiveSummary, UncertaintyReport, mc_predict,
                         mc_predict_batch, mc_probabilities, mutual_information, predictive_entropy,
                         triage)
from bcsnn.coding import CODING_MODES, encode_constant_current, output_logits, softmax
from bcsnn.errors import ValidationError
from bcsnn.layers import MC_EVAL
from bcsnn.models import ArchitectureSpec, build_desk_model
from bcsnn.network import sample_dropout_masks


def entropy_oracle(p):
    return float(-sum(mpmath.mpf(x) * mpmath.log(x) for x in p if x > 0))


@st.composite
def summaries(draw):
    passes = draw(st.integers(1, 8))
    classes = draw(st.integers(2, 5))
    raw = draw(st.lists(st.lists(st.floats(0, 1), min_size=classes, max_size=classes),
                        min_size=passes, max_size=passes))
    arr = np.array(raw) + 1e-12
    return PredictiveSummary(arr / arr.sum(axis=1, keepdims=True))


@pytest.fixture(scope="module")
def small_net():
    return build_desk_model(ArchitectureSpec(input_size=16, conv_filters=(4,), hidden_widths=(12, 8),
                                             dropout_rates=(0.5, 0.3)), seed=3)


@pytest.fixture(scope="module")
def currents():
    return encode_constant_current(np.random.default_rng(0).random((4, 3, 16, 16)), 6)


class TestEntropy:
    def test_one_hot(self):
        assert predictive_entropy([0.0, 1.0, 0.0]) == 0.0

    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_uniform(self, n):
        assert abs(predictive_entropy(np.full(n, 1 / n)) - math.log(n)) < 1e-12

    def test_hand_value(self):
        h = predictive_entropy([0.75, 0.25])
        assert abs(h - entropy_oracle([0.75, 0.25])) < 1e-15
        assert round(h, 6) == 0.562335

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [1.2, -0.2], [0.3, 0.3]])
    def test_not_simplex(self, bad):
        with pytest.raises(ValidationError):
            predictive_entropy(bad)


class TestMutualInformation:
    def test_identical_passes(self):
        s = PredictiveSummary(np.tile([0.2, 0.5, 0.3], (10, 1)))
        assert mutual_information(s) == 0.0
        np.testing.assert_allclose(s.mean, [0.2, 0.5, 0.3])

    def test_disagreeing_one_hots(self):
        s = PredictiveSummary(np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(s.mean, [0.5, 0.5])
        assert abs(mutual_information(s) - math.log(2)) < 1e-12

    @settings(max_examples=300)
    @given(summaries())
    def test_bounds(self, s):
        h = predictive_entropy(s.mean)
        mi_raw = mutual_information(s, clamp=False)
        assert mi_raw >= -1e-9
        assert mi_raw <= h + 1e-9
        assert h <= math.log(s.num_classes) + 1e-9
        assert 0.0 <= mutual_information(s) <= h + 1e-9

    def test_clamp_logged(self, caplog):
        # a mean slightly sharper than its pass gives a small negative residue
        s = PredictiveSummary(np.array([[0.1, 0.9]]))
        s.mean = np.array([0.1 - 1e-7, 0.9 + 1e-7])
        with caplog.at_level(logging.DEBUG, logger="bcsnn.bayes"):
            assert mutual_information(s) == 0.0
        assert "clamped" in caplog.text

    def test_summary_shape(self):
        s = PredictiveSummary([0.3, 0.7])
        assert s.mc_passes == 1 and s.num_classes == 2 and s.predicted == 1


class TestMCPredict:
    def test_passes_validated(self, small_net, currents):
        with pytest.raises(ValidationError):
            mc_probabilities(small_net, currents, mc_passes=0)

    def test_single_sample_only(self, small_net, currents):
        with pytest.raises(ValidationError):
            mc_predict(small_net, currents, mc_passes=2)

    def test_one_pass(self, small_net, currents):
        s = mc_predict(small_net, currents[:, 0], mc_passes=1, base_seed=4)
        np.testing.assert_array_equal(s.mean, s.per_pass[0])

    def test_no_dropout_all_rows_equal(self, currents):
        net = build_desk_model(ArchitectureSpec(input_size=16, conv_filters=(4,), hidden_widths=(12,),
                                                dropout_rates=(0.0,)), seed=3)
        s = mc_predict(net, currents[:, :1], mc_passes=5)
        for row in s.per_pass:
            np.testing.assert_array_equal(row, s.per_pass[0])
        assert abs(mutual_information(s)) < 1e-12

    def test_deterministic(self, small_net, currents):
        a = mc_predict_batch(small_net, currents, mc_passes=6, base_seed=10)
        b = mc_predict_batch(small_net, currents, mc_passes=6, base_seed=10)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.per_pass, sb.per_pass)

    @pytest.mark.parametrize("coding", CODING_MODES)
    def test_seed_policy_matches_full_forward(self, small_net, currents, coding):
        """Pass t is a full mc-eval forward with masks seeded base_seed + t."""
        probs = mc_probabilities(small_net, currents, mc_passes=4, base_seed=20, coding=coding)
        for t in range(4):
            masks = sample_dropout_masks(small_net, 20 + t, currents.shape[1])
            sim = small_net.forward(currents, MC_EVAL, masks=masks)
            np.testing.assert_array_equal(probs[t], softmax(output_logits(sim.spikes, coding)))

    def test_pass_order_irrelevant(self, small_net, currents):
        probs = mc_probabilities(small_net, currents, mc_passes=8, base_seed=0)
        perm = np.random.default_rng(1).permutation(8)
        for i in range(currents.shape[1]):
            a = PredictiveSummary(probs[:, i])
            b = PredictiveSummary(probs[perm, i])
            np.testing.assert_allclose(a.mean, b.mean, rtol=0, atol=1e-12)

    def test_rows_are_simplex(self, small_net, currents):
        probs = mc_probabilities(small_net, currents, mc_passes=3)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
        assert (probs >= 0).all()


class TestTriage:
    def _report(self, entropy, mi=None):
        entropy = np.asarray(entropy, dtype=float)
        mi = np.zeros_like(entropy) if mi is None else mi
        return UncertaintyReport(np.zeros(len(entropy), int), entropy, mi, np.zeros(len(entropy), int))

    def test_selects_above_threshold(self):
        np.testing.assert_array_equal(triage(self._report([0.1, 0.5, 0.39]), 0.4), [1])

    def test_default_threshold(self):
        np.testing.assert_array_equal(triage(self._report([0.4, 0.3999])), [0])

    def test_zero_selects_all_sorted(self):
        np.testing.assert_array_equal(triage(self._report([0.1, 0.5, 0.39]), 0.0), [1, 2, 0])

    def test_ties_keep_order(self):
        np.testing.assert_array_equal(triage(self._report([0.5, 0.6, 0.5, 0.5]), 0.4), [1, 0, 2, 3])

    def test_above_max_entropy_empty(self):
        assert triage(self._report([math.log(2), 0.3]), math.log(2) + 1e-6).size == 0

    def test_mi_metric(self):
        r = self._report([0.6, 0.6, 0.6], mi=np.array([0.05, 0.5, 0.3]))
        np.testing.assert_array_equal(triage(r, 0.2, metric="mi"), [1, 2])

    def test_invalid(self):
        with pytest.raises(ValidationError):
            triage(self._report([0.1]), -0.1)
        with pytest.raises(ValidationError):
            triage(self._report([0.1]), 0.1, metric="variance")


class TestReport:
    def test_from_summaries_and_csv(self, tmp_path):
        sums = [PredictiveSummary([[0.9, 0.1], [0.7, 0.3]]), PredictiveSummary([[0.2, 0.8], [0.6, 0.4]])]
        r = UncertaintyReport.from_summaries(sums, true_label=[0, 0])
        np.testing.assert_array_equal(r.predicted, [0, 1])
        np.testing.assert_array_equal(r.correct, [True, False])
        np.testing.assert_allclose(r.entropy[0], entropy_oracle([0.8, 0.2]), atol=1e-15)
        assert (r.mutual_information <= r.entropy + 1e-9).all()
        np.testing.assert_array_equal(r.flagged, r.entropy >= 0.4)
        path = r.to_csv(tmp_path / "u.csv")
        rows = list(csv.reader(open(path)))
        assert rows[0] == REPORT_COLUMNS
        assert rows[1][3] == f"{r.entropy[0]:.6f}"
        assert len(rows[1][3].split(".")[1]) == 6

    def test_no_labels(self):
        r = UncertaintyReport([1], [0.2], [0.1])
        assert r.correct is None
        assert next(r.rows())["true_label"] == ""
