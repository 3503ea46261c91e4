import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bcsnn.coding import (RATE, TEMPORAL_INVERSE, TEMPORAL_NEGATIVE, FirstSpikeTimes, SpikeRecord,
                          encode_constant_current, first_spike_decode, logits_grad_to_spikes,
                          output_logits, predict, rate_decode, softmax, softmax_cross_entropy,
                          temporal_logits)
from bcsnn.errors import ValidationError

spike_arrays = hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(2, 5)),
                          elements=st.sampled_from([0.0, 1.0]))


def brute_first_spiker(spikes):
    """Scan time then neurons; -1 when nothing fires."""
    for t in range(spikes.shape[0]):
        for i in range(spikes.shape[1]):
            if spikes[t, i]:
                # earliest step; within that step the lowest index wins
                return i
    return -1


class TestEncode:
    def test_constant_over_time(self):
        x = np.random.default_rng(0).random((3, 4, 4))
        cur = encode_constant_current(x, 5)
        assert cur.shape == (5, 3, 4, 4)
        for t in range(5):
            np.testing.assert_array_equal(cur[t], x)
        np.testing.assert_array_equal(encode_constant_current(x, 1)[0], cur[0])

    def test_zero_image(self):
        np.testing.assert_array_equal(encode_constant_current(np.zeros((2, 2)), 3), 0.0)

    @pytest.mark.parametrize("bad", [-0.01, 1.01, np.nan])
    def test_out_of_range(self, bad):
        with pytest.raises(ValidationError):
            encode_constant_current(np.array([0.5, bad]), 4)

    def test_num_steps(self):
        with pytest.raises(ValidationError):
            encode_constant_current(np.zeros(3), 0)


class TestRateDecode:
    def test_all_zero(self):
        counts, pred = rate_decode(np.zeros((4, 3)))
        np.testing.assert_array_equal(counts, 0)
        assert pred == 0

    def test_hand_example(self):
        spikes = np.array([[1, 0], [0, 1], [1, 0]], dtype=float)
        counts, pred = rate_decode(SpikeRecord(spikes))
        np.testing.assert_array_equal(counts, [2, 1])
        assert pred == 0

    @given(spike_arrays, st.randoms())
    def test_permutation_invariant(self, spikes, rnd):
        perm = list(range(spikes.shape[0]))
        rnd.shuffle(perm)
        np.testing.assert_array_equal(rate_decode(spikes)[0], rate_decode(spikes[perm])[0])

    @given(spike_arrays)
    def test_argmax_matches_softmax(self, spikes):
        counts, pred = rate_decode(spikes)
        assert np.argmax(softmax(counts)) == pred

    def test_record_needs_two_axes(self):
        with pytest.raises(ValidationError):
            SpikeRecord(np.zeros(3))


class TestFirstSpikeDecode:
    def test_first_wins(self):
        spikes = np.zeros((6, 2))
        spikes[1, 0] = spikes[4, 1] = 1
        ft, pred = first_spike_decode(spikes)
        np.testing.assert_array_equal(ft.ft, [2, 5])
        assert pred == 0

    def test_silent(self):
        ft, pred = first_spike_decode(np.zeros((7, 3)))
        np.testing.assert_array_equal(ft.ft, 8)
        assert ft.never.all() and ft.sentinel == 8
        assert pred == 0

    def test_hand_example(self):
        spikes = np.array([[0, 1], [1, 0], [1, 0]], dtype=float)
        ft, pred = first_spike_decode(spikes)
        np.testing.assert_array_equal(ft.ft, [2, 1])
        assert pred == 1

    @given(spike_arrays)
    def test_ft_range(self, spikes):
        ft, _ = first_spike_decode(spikes)
        assert ((ft.ft >= 1) & (ft.ft <= spikes.shape[0] + 1)).all()

    @settings(max_examples=300)
    @given(spike_arrays)
    def test_temporal_argmax_is_first_spiker(self, spikes):
        ft, pred = first_spike_decode(spikes)
        oracle = brute_first_spiker(spikes)
        if oracle >= 0:
            assert pred == oracle
            assert np.argmax(temporal_logits(ft, "negative")) == oracle
            assert np.argmax(temporal_logits(ft, "inverse")) == oracle


class TestTemporalLogits:
    def test_negative(self):
        logits = temporal_logits(FirstSpikeTimes(np.array([1, 2]), 5), "negative")
        np.testing.assert_array_equal(logits, [-1.0, -2.0])
        assert np.argmax(logits) == 0

    def test_inverse(self):
        logits = temporal_logits(FirstSpikeTimes(np.array([1, 2]), 5), "inverse")
        np.testing.assert_array_equal(logits, [1.0, 0.5])

    def test_sentinels(self):
        ft = FirstSpikeTimes(np.array([3, 6]), 5)
        np.testing.assert_array_equal(temporal_logits(ft, "negative"), [-3.0, -6.0])
        np.testing.assert_array_equal(temporal_logits(ft, "inverse"), [1 / 3, 0.0])

    @pytest.mark.parametrize("strategy", ["negative", "inverse"])
    def test_equal_times(self, strategy):
        logits = temporal_logits(FirstSpikeTimes(np.array([4, 4, 4]), 9), strategy)
        assert np.all(logits == logits[0])

    @pytest.mark.parametrize("strategy", ["negative", "inverse"])
    def test_later_is_worse(self, strategy):
        T = 10
        logits = temporal_logits(FirstSpikeTimes(np.arange(1, T + 2), T), strategy)
        assert np.all(np.diff(logits) < 0)

    def test_unknown(self):
        with pytest.raises(ValidationError):
            temporal_logits(FirstSpikeTimes(np.array([1]), 2), "log")


class TestSoftmaxCrossEntropy:
    def test_symmetric(self):
        p, loss, grad = softmax_cross_entropy(np.zeros(2), 0)
        np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-15)
        assert loss == pytest.approx(math.log(2), abs=1e-15)
        np.testing.assert_allclose(grad, [-0.5, 0.5], atol=1e-15)

    def test_hand_example(self):
        p, loss, _ = softmax_cross_entropy(np.array([2.0, 0.0]), 0)
        e2 = math.exp(2.0)
        np.testing.assert_allclose(p, [e2 / (e2 + 1), 1 / (e2 + 1)], rtol=1e-14)
        assert loss == pytest.approx(math.log1p(math.exp(-2.0)), rel=1e-14)
        assert round(loss, 6) == 0.126928
        np.testing.assert_allclose(p, [0.880797, 0.119203], atol=5e-7)

    @given(hnp.arrays(np.float64, st.integers(2, 6), elements=st.floats(-30, 30)),
           st.floats(-100, 100), st.data())
    def test_properties(self, logits, shift, data):
        label = data.draw(st.integers(0, len(logits) - 1))
        p, loss, grad = softmax_cross_entropy(logits, label)
        assert abs(p.sum() - 1) < 1e-12
        assert (p > 0).all() and loss >= 0
        assert abs(grad.sum()) < 1e-12
        p2, loss2, _ = softmax_cross_entropy(logits + shift, label)
        np.testing.assert_allclose(p2, p, rtol=1e-9, atol=1e-15)
        assert loss2 == pytest.approx(loss, rel=1e-9, abs=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=4)
        _, _, grad = softmax_cross_entropy(z, 2)
        h = 1e-6
        fd = [(softmax_cross_entropy(z + h * e, 2)[1] - softmax_cross_entropy(z - h * e, 2)[1]) / (2 * h)
              for e in np.eye(4)]
        np.testing.assert_allclose(grad, fd, atol=1e-8)

    def test_batch(self):
        z = np.array([[0.0, 0.0], [2.0, 0.0]])
        p, loss, grad = softmax_cross_entropy(z, np.array([0, 0]))
        assert loss.shape == (2,)
        assert loss[0] == pytest.approx(math.log(2))

    @pytest.mark.parametrize("label", [2, -1, 0.5])
    def test_invalid_label(self, label):
        with pytest.raises(ValidationError):
            softmax_cross_entropy(np.zeros(2), label)


class TestOutputGradients:
    def test_modes_and_predict(self):
        spikes = np.zeros((4, 1, 2))
        spikes[2, 0, 0] = 1
        spikes[[1, 3], 0, 1] = 1
        np.testing.assert_array_equal(output_logits(spikes, RATE), [[1, 2]])
        np.testing.assert_array_equal(output_logits(spikes, TEMPORAL_NEGATIVE), [[-3, -2]])
        np.testing.assert_array_equal(predict(spikes, RATE), [1])
        np.testing.assert_array_equal(predict(spikes, TEMPORAL_INVERSE), [1])
        with pytest.raises(ValidationError):
            output_logits(spikes, "phase")

    def test_rate_grad_broadcast(self):
        g = np.array([[0.3, -0.3]])
        out = logits_grad_to_spikes(g, np.zeros((5, 1, 2)), RATE)
        np.testing.assert_array_equal(out, np.broadcast_to(g, (5, 1, 2)))

    def test_temporal_grad_routed_to_first_spike(self):
        spikes = np.zeros((4, 1, 2))
        spikes[1, 0, 0] = spikes[3, 0, 0] = 1
        g = np.array([[0.5, -0.25]])
        neg = logits_grad_to_spikes(g, spikes, TEMPORAL_NEGATIVE)
        # neuron 0 first fires at step 2 (row 1); neuron 1 never fires -> last row
        expected = np.zeros_like(spikes)
        expected[1, 0, 0] = 0.5
        expected[3, 0, 1] = -0.25
        np.testing.assert_array_equal(neg, expected)
        inv = logits_grad_to_spikes(g, spikes, TEMPORAL_INVERSE)
        expected[1, 0, 0] = 0.5 / 4
        expected[3, 0, 1] = -0.25 / 25
        np.testing.assert_allclose(inv, expected, rtol=1e-15)
