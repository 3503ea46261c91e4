import csv
from pathlib import Path

import numpy as np
import pytest

from bcsnn.errors import ValidationError
from bcsnn.layers import Dropout, Flatten, Leaky, Linear
from bcsnn.models import (PAPER_DROPOUT_RATES, PAPER_TOTAL_PARAMS, ArchitectureSpec, build_desk_model,
                          build_paper_model, summary, summary_rows)
from bcsnn.neuron import LifParams

TABLE = Path(__file__).parent / "data" / "reference_architecture.tsv"


def reference_rows():
    with open(TABLE) as fh:
        return [(r["layer"], r["output_shape"], int(r["params"].replace(",", "")))
                for r in csv.DictReader(fh, delimiter="\t")]


@pytest.fixture(scope="module")
def paper_net():
    return build_paper_model(2)


class TestFullModel:
    def test_total(self, paper_net):
        assert paper_net.param_count() == PAPER_TOTAL_PARAMS == 77_597_926
        assert sum(r[2] for r in reference_rows()) == PAPER_TOTAL_PARAMS

    def test_rows_match_reference(self, paper_net):
        ref = reference_rows()
        got = summary_rows(paper_net)
        assert len(got) == len(ref) == 36
        for g, r in zip(got, ref):
            assert g == r

    def test_params_match_array_sizes(self, paper_net):
        assert sum(p.size for _, p in paper_net.parameters()) == PAPER_TOTAL_PARAMS

    def test_output_block(self, paper_net):
        rows = summary_rows(paper_net)
        assert rows[-3] == ("Linear-34", "[-1, 2]", 66)
        assert rows[-2] == ("BatchNorm1d-35", "[-1, 2]", 4)
        assert paper_net.layers[-1].record_membrane

    def test_dropout_rates(self, paper_net):
        rates = tuple(layer.rate for _, layer in paper_net.dropout_layers())
        assert rates == PAPER_DROPOUT_RATES == (0.5, 0.3, 0.2, 0.2)

    def test_shared_lif(self):
        lif = LifParams(beta=0.8, theta=1.2)
        net = build_paper_model(2, lif=lif)
        leaky = [l for l in net.layers if isinstance(l, Leaky)]
        assert len(leaky) == 9
        assert all(l.lif == lif for l in leaky)

    def test_three_classes(self, paper_net):
        net3 = build_paper_model(3)
        r2, r3 = summary_rows(paper_net), summary_rows(net3)
        assert r3[-3] == ("Linear-34", "[-1, 3]", 32 * 3 + 3)
        assert r3[-2][2] == 6
        assert r2[:-3] == r3[:-3]

    @pytest.mark.parametrize("n", [1, 4])
    def test_unsupported_classes(self, n):
        with pytest.raises(ValidationError):
            build_paper_model(n)

    def test_unsupported_input_size(self):
        with pytest.raises(ValidationError):
            build_paper_model(2, input_size=64)

    def test_summary_text(self, paper_net):
        text = summary(paper_net)
        assert "Total params: 77,597,926" in text
        assert "Non-trainable params: 0" in text
        assert "[[[-1, 2], [-1, 2]]]" in text


class TestDeskModel:
    def test_flatten_width(self):
        net = build_desk_model()
        flat = next(i for i, l in enumerate(net.layers) if isinstance(l, Flatten))
        assert net.shapes[flat] == (16 * 6 * 6,) == (576,)
        assert isinstance(net.layers[flat + 1], Linear) and net.layers[flat + 1].in_features == 576

    def test_same_seed_same_weights(self):
        a, b = build_desk_model(seed=5), build_desk_model(seed=5)
        for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)
        c = build_desk_model(seed=6)
        assert not np.array_equal(next(a.parameters())[1], next(c.parameters())[1])

    @pytest.mark.parametrize("spec", [
        ArchitectureSpec(conv_filters=(), hidden_widths=(), dropout_rates=()),
        ArchitectureSpec(hidden_widths=(8,), dropout_rates=()),
        ArchitectureSpec(num_classes=1),
        ArchitectureSpec(input_size=6, conv_filters=(4, 4)),
        ArchitectureSpec(conv_filters=(0,)),
    ])
    def test_invalid(self, spec):
        with pytest.raises(ValidationError):
            build_desk_model(spec)

    def test_dense_only(self):
        net = build_desk_model(ArchitectureSpec(conv_filters=(), hidden_widths=(5,), input_size=4))
        assert net.shapes[0] == (48,)

    def test_block_grammar(self):
        net = build_desk_model(ArchitectureSpec(hidden_widths=(16, 8), dropout_rates=(0.4, 0.1)))
        kinds = [l.kind for l in net.layers]
        assert kinds[:4] == ["conv", "batchnorm-2d", "lif", "maxpool"]
        assert kinds[-3:] == ["linear", "batchnorm-1d", "lif"]
        assert [l.rate for l in net.layers if isinstance(l, Dropout)] == [0.4, 0.1]

    def test_relaxed_flag(self):
        net = build_desk_model(ArchitectureSpec(relaxed=True))
        assert all(l.relaxed for l in net.layers if isinstance(l, Leaky))
