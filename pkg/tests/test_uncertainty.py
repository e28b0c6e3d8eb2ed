import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from uncurl.numerics import CategoricalDistribution, RngStream, dropout_mask, softmax_probs
from uncurl.uncertainty import (
    MEMBER_COUNTER_STRIDE,
    EnsembleConfig,
    decompose,
    decompose_probs,
    entropy,
    mc_ensemble,
    pearson,
    spearman,
)


class StubModel:
    """Fixed-logit model with one dropout site, for ensemble tests."""

    n_dropout_sites = 1

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=np.float64)

    def predict_probs(self, inputs, rng=None, dropout_rate=0.0):
        z = self.logits
        if rng is not None and dropout_rate > 0.0:
            z = z * dropout_mask(z.shape, dropout_rate, rng).data
        return softmax_probs(z)


class NoDropoutModel(StubModel):
    n_dropout_sites = 0


class TestEntropy:
    def test_one_hot_is_zero(self):
        assert entropy(CategoricalDistribution(np.array([0.0, 1.0, 0.0]))) == 0.0

    def test_uniform_is_log_v(self):
        d = CategoricalDistribution(np.full(8, 0.125))
        assert entropy(d) == pytest.approx(math.log(8), abs=1e-12)

    def test_hand_evaluated(self):
        d = CategoricalDistribution(np.array([0.5, 0.25, 0.25]))
        assert entropy(d) == pytest.approx(1.0397208, abs=1e-7)

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError):
            entropy(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            entropy(np.array([1.2, -0.2]))


class TestDecompose:
    def test_identical_members_zero_epistemic_exactly(self):
        member = CategoricalDistribution(np.array([0.1, 0.2, 0.7]))
        out = decompose([member, member, member])
        assert out.epistemic == 0.0
        assert out.total == out.aleatoric == pytest.approx(entropy(member), abs=0)

    def test_maximal_disagreement(self):
        a = CategoricalDistribution(np.array([1.0, 0.0]))
        b = CategoricalDistribution(np.array([0.0, 1.0]))
        out = decompose([a, b])
        assert out.total == pytest.approx(math.log(2), abs=1e-12)
        assert out.aleatoric == 0.0
        assert out.epistemic == pytest.approx(0.6931472, abs=1e-7)

    def test_hand_evaluated_pair(self):
        out = decompose(
            [
                CategoricalDistribution(np.array([0.9, 0.1])),
                CategoricalDistribution(np.array([0.1, 0.9])),
            ]
        )
        assert out.total == pytest.approx(math.log(2), abs=1e-12)
        assert out.aleatoric == pytest.approx(0.3250830, abs=1e-7)
        assert out.epistemic == pytest.approx(0.3680642, abs=1e-7)

    def test_identity_is_exact_and_jensen_holds(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n, v = rng.integers(1, 9), rng.integers(2, 7)
            p = rng.dirichlet(np.ones(v), size=n)
            out = decompose_probs(p)
            assert out.total - (out.aleatoric + out.epistemic) == 0.0
            assert out.epistemic >= -1e-9
            assert out.total <= math.log(v) + 1e-9
            assert out.aleatoric >= 0.0

    def test_mixed_vocab_sizes_rejected(self):
        with pytest.raises(ValueError, match="mixed vocabulary"):
            decompose(
                [
                    CategoricalDistribution(np.array([0.5, 0.5])),
                    CategoricalDistribution(np.array([0.4, 0.3, 0.3])),
                ]
            )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            decompose([])


class TestMcEnsemble:
    def test_rate_zero_gives_identical_members(self):
        model = StubModel(np.array([[0.3, -0.2, 1.0], [2.0, 0.0, -1.0]]))
        ens = mc_ensemble(model, None, EnsembleConfig(n_samples=5, dropout_rate=0.0), RngStream(0))
        assert len(ens) == 2 and len(ens[0]) == 5
        for site in ens:
            for member in site[1:]:
                assert np.array_equal(member.probs, site[0].probs)
            assert decompose(site).epistemic == 0.0

    def test_defaults_are_100_samples_rate_01(self):
        cfg = EnsembleConfig()
        assert cfg.n_samples == 100
        assert cfg.dropout_rate == 0.1

    def test_fixed_seed_bit_identical(self):
        model = StubModel(np.array([[0.5, 1.5, -0.5]]))
        cfg = EnsembleConfig(n_samples=7, dropout_rate=0.3)
        a = mc_ensemble(model, None, cfg, RngStream(9))
        b = mc_ensemble(model, None, cfg, RngStream(9))
        for sa, sb in zip(a, b):
            for ma, mb in zip(sa, sb):
                assert np.array_equal(ma.probs, mb.probs)

    def test_member_prefix_independent_of_sample_count(self):
        model = StubModel(np.array([[0.5, 1.5, -0.5]]))
        small = mc_ensemble(model, None, EnsembleConfig(3, 0.3), RngStream(4))
        large = mc_ensemble(model, None, EnsembleConfig(6, 0.3), RngStream(4))
        for k in range(3):
            assert np.array_equal(small[0][k].probs, large[0][k].probs)

    def test_counter_advances_past_all_members(self):
        model = StubModel(np.array([[0.0, 1.0]]))
        rng = RngStream(2)
        mc_ensemble(model, None, EnsembleConfig(4, 0.2), rng)
        assert rng.counter == 4 * MEMBER_COUNTER_STRIDE

    def test_no_stochastic_sites_error(self):
        model = NoDropoutModel(np.array([[0.0, 1.0]]))
        with pytest.raises(ValueError, match="no stochastic sites"):
            mc_ensemble(model, None, EnsembleConfig(3, 0.1), RngStream(0))
        # rate 0 is fine even without sites
        mc_ensemble(model, None, EnsembleConfig(3, 0.0), RngStream(0))


class TestPearson:
    def test_affine_increasing(self):
        xs = np.array([0.0, 1.0, 2.0, 5.0])
        assert pearson(xs, 2 * xs + 1) == 1.0

    def test_affine_decreasing(self):
        xs = np.array([0.0, 1.0, 2.0])
        assert pearson(xs, -xs) == -1.0

    def test_hand_evaluated(self):
        assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)

    def test_degenerate_sample(self):
        with pytest.raises(ValueError, match="degenerate"):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_matches_scipy_on_random_data(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=30)
            y = rng.normal(size=30) + 0.5 * x
            assert pearson(x, y) == pytest.approx(scipy_stats.pearsonr(x, y)[0], abs=1e-12)


class TestSpearman:
    def test_monotone_increasing(self):
        xs = np.array([0.1, 0.7, 2.0, 9.0])
        assert spearman(xs, np.exp(xs)) == 1.0

    def test_rank_reversal(self):
        assert spearman([1, 2, 3, 4], [10, 9, 8, 7]) == -1.0

    def test_hand_evaluated(self):
        assert spearman([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5, abs=1e-12)

    def test_ties_average_ranks_match_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.integers(0, 5, size=25).astype(float)
            y = rng.integers(0, 5, size=25).astype(float)
            if np.unique(x).size < 2 or np.unique(y).size < 2:
                continue
            assert spearman(x, y) == pytest.approx(scipy_stats.spearmanr(x, y)[0], abs=1e-12)

    def test_degenerate_ranks(self):
        with pytest.raises(ValueError, match="degenerate"):
            spearman([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(2, 5),
    st.integers(0, 2**32 - 1),
)
def test_decomposition_identity_property(n_members, n_classes, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n_classes), size=n_members)
    out = decompose_probs(p)
    assert out.total - (out.aleatoric + out.epistemic) == 0.0
    assert out.epistemic >= -1e-9
