import math
import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from vasekit.dimensions import DIMENSIONS, DimensionSlots, extract_slots
from vasekit.exceptions import EmptyGroup, InvalidConfig, ProviderError
from vasekit.reward import (
    CaptionRewardScorer,
    GroupAdvantageNormalizer,
    RewardConfig,
    combine,
    compute_penalty,
    compute_reward,
    dimensional_reward,
    group_advantages,
    length_penalty,
    repetition_penalty,
)
from vasekit.text import tokenize

CAPTION = ("This Attic red-figure amphora was made ca. 450 BC and shows a symposium with youths, "
           "attributed to the Berlin Painter.")
SLOTS = extract_slots(CAPTION)


class TestDimensionalReward:
    @pytest.mark.parametrize("sim, expected", [(0.9, 0.9), (0.69, 0.0), (0.70, 0.70), (-0.4, 0.0), (1.0, 1.0)])
    def test_threshold(self, sim, expected):
        assert dimensional_reward(sim, 0.7) == expected

    def test_just_below_boundary(self):
        assert dimensional_reward(math.nextafter(0.7, 0), 0.7) == 0.0


class TestCombine:
    def test_worked_example(self):
        sims = (0.9, 0.65, 0.8, 0.7, 0.75, 0.5)
        w = [Fraction(x) for x in ("0.20", "0.20", "0.15", "0.15", "0.20", "0.10")]
        oracle = sum(wi * Fraction(str(s)) for wi, s in zip(w, sims) if Fraction(str(s)) >= Fraction("0.7"))
        assert oracle == Fraction("0.555")
        rewards, raw, r = combine(sims, RewardConfig())
        assert rewards == [0.9, 0.0, 0.8, 0.7, 0.75, 0.0]
        assert abs(r - 0.555) <= 1e-9 and abs(raw - 0.555) <= 1e-9

    def test_clamps(self):
        assert combine([1.0] * 6, RewardConfig(), 0.0, 0.1)[2] == 1.0
        assert combine([0.0] * 6, RewardConfig(), 0.35, 0.0)[2] == 0.0

    sims6 = st.lists(st.floats(-1, 1), min_size=6, max_size=6)

    @given(sims6, st.integers(0, 5), st.floats(0.0, 0.2))
    def test_monotone_above_tau(self, sims, i, delta):
        cfg = RewardConfig()
        sims = list(sims)
        sims[i] = max(sims[i], cfg.tau)
        assume(sims[i] + delta <= 1.0)
        bumped = sims[:]
        bumped[i] += delta
        _, raw0, _ = combine(sims, cfg, 0.1, 0.05)
        _, raw1, _ = combine(bumped, cfg, 0.1, 0.05)
        assert abs((raw1 - raw0) - cfg.weights[i] * delta) <= 1e-12

    @given(sims6, st.integers(0, 5), st.floats(1e-6, 0.1))
    def test_threshold_jump(self, sims, i, delta):
        cfg = RewardConfig()
        at, below = list(sims), list(sims)
        at[i], below[i] = cfg.tau, cfg.tau - delta
        jump = combine(at, cfg)[1] - combine(below, cfg)[1]
        assert jump >= cfg.weights[i] * cfg.tau - cfg.weights[i] * delta - 1e-12


class TestPenalty:
    def test_length_band(self):
        assert length_penalty(15, 15, 120) == 0.0 and length_penalty(120, 15, 120) == 0.0
        assert length_penalty(0, 15, 120) == 1.0
        assert length_penalty(10, 15, 120) == pytest.approx(5 / 15)
        assert length_penalty(180, 15, 120) == pytest.approx(0.5)
        assert length_penalty(1000, 15, 120) == 1.0

    def test_fifty_repeats(self):
        toks = ["amphora"] * 50
        trigrams = [tuple(toks[i:i + 3]) for i in range(len(toks) - 2)]
        oracle = 1 - len(set(trigrams)) / len(trigrams)
        assert oracle == 1 - 1 / 48
        assert repetition_penalty(toks) == oracle
        p = compute_penalty(" ".join(toks), SLOTS, RewardConfig())
        assert p.repetition == oracle
        assert abs(0.1 * p.repetition - 0.0979) < 1e-4

    def test_empty_caption(self):
        p = compute_penalty("", SLOTS, RewardConfig())
        assert (p.length, p.repetition, p.irrelevant) == (1.0, 0.0, 1.0)
        assert p.total == pytest.approx(0.25, abs=1e-12)

    def test_fluent_caption_has_no_penalty(self):
        assert compute_penalty(CAPTION, SLOTS, RewardConfig()).total == 0.0

    def test_irrelevant_sentence_fraction(self):
        text = CAPTION + " The weather in the museum was pleasant today, we had lunch after."
        p = compute_penalty(text, SLOTS, RewardConfig())
        # "ca." ends a sentence too: three sentences, one unrelated.
        assert p.irrelevant == pytest.approx(1 / 3)
        assert compute_penalty("An Attic kylix! Lunch was nice; the red-figure style.", SLOTS,
                               RewardConfig()).irrelevant == pytest.approx(1 / 3)

    @settings(max_examples=80, deadline=None)
    @given(st.text(alphabet="attic amphora kylix the . ; !", max_size=200))
    def test_total_is_weighted_sum(self, text):
        cfg = RewardConfig()
        p = compute_penalty(text, SLOTS, cfg)
        assert abs(p.total - (0.1 * p.length + 0.1 * p.repetition + 0.15 * p.irrelevant)) <= 1e-12
        assert 0.0 <= p.total <= 0.35 + 1e-12


class TestComputeReward:
    def test_perfect_match(self):
        r = compute_reward(CAPTION, SLOTS, CAPTION)
        assert all(s == 1.0 for s in r.sims.values())
        assert r.penalty.total == 0.0
        assert r.bonus == pytest.approx(0.1)
        assert r.reward == 1.0

    def test_absent_generated_slot_contributes_zero(self):
        gen = "This Attic red-figure amphora was made ca. 450 BC and shows a symposium with youths at a feast."
        r = compute_reward(gen, SLOTS, CAPTION)
        assert r.generated_slots["attribution"] is None
        assert r.sims["attribution"] == 0.0 and r.rewards["attribution"] == 0.0

    def test_target_without_slots_is_rejected(self):
        with pytest.raises(InvalidConfig):
            compute_reward(CAPTION, DimensionSlots(), CAPTION)

    def test_provider_failure_is_wrapped(self):
        class Broken:
            name, dimension, deterministic = "broken", 4, True

            def embed(self, texts):
                raise OSError("socket closed")

        with pytest.raises(ProviderError):
            compute_reward(CAPTION, SLOTS, CAPTION, provider=Broken())

    words = st.sampled_from(["attic", "corinthian", "red-figure", "black-figure", "amphora", "kylix", "ca.", "450",
                             "bc", "berlin", "painter", "exekias", "the", "a", "vase", "with", "youths", ".", "!"])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(words, max_size=60).map(" ".join), st.floats(0, 1), st.floats(0, 0.5))
    def test_reward_in_unit_interval(self, gen, tau, beta):
        r = compute_reward(gen, SLOTS, CAPTION, RewardConfig(tau=tau, beta=beta))
        assert 0.0 <= r.reward <= 1.0
        assert all(math.isfinite(v) for v in [r.raw, r.bonus, *r.sims.values()])
        for d in DIMENSIONS:
            s = r.sims[d.value]
            assert r.rewards[d.value] == (max(s, 0.0) if s >= tau else 0.0)


class TestConfig:
    def test_defaults(self):
        cfg = RewardConfig()
        assert cfg.weights == (0.20, 0.20, 0.15, 0.15, 0.20, 0.10)
        assert math.fsum(cfg.weights) == 1.0
        assert (cfg.tau, cfg.alpha_length, cfg.alpha_repetition, cfg.alpha_irrelevant) == (0.7, 0.1, 0.1, 0.15)

    @pytest.mark.parametrize("kw", [{"tau": 1.5}, {"weights": (0.5,) * 6}, {"beta": -1},
                                    {"length_min": 50, "length_max": 10}, {"weights": (1.0,)}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            RewardConfig(**kw).validate()

    def test_dict_round_trip(self):
        cfg = RewardConfig(tau=0.6)
        assert RewardConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(InvalidConfig):
            RewardConfig.from_dict({"gamma": 1})


class TestAdvantages:
    def test_examples(self):
        a = group_advantages([0.2, 0.4, 0.6, 0.8])
        std = statistics.pstdev([0.2, 0.4, 0.6, 0.8])
        oracle = [(x - 0.5) / std for x in (0.2, 0.4, 0.6, 0.8)]
        assert np.allclose(a.advantages, oracle, atol=1e-6)
        assert np.allclose(a.advantages, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-3)
        assert group_advantages([0.5, 0.5, 0.5]).advantages == (0.0, 0.0, 0.0)
        assert group_advantages([0.3]).advantages == (0.0,)

    def test_empty(self):
        with pytest.raises(EmptyGroup):
            group_advantages([])

    groups = st.lists(st.floats(0, 1), min_size=2, max_size=64)

    @given(groups)
    def test_moments(self, r):
        a = np.asarray(group_advantages(r).advantages)
        assert abs(a.mean()) <= 1e-9
        sd = np.std(r)
        if sd > 1e-8:
            assert abs(a.std() - 1.0) <= 1e-9
        else:
            assert not a.any()

    @given(groups, st.randoms(), st.floats(-0.5, 0.5))
    def test_permutation_and_shift(self, r, rnd, c):
        base = group_advantages(r).advantages
        idx = list(range(len(r)))
        rnd.shuffle(idx)
        perm = group_advantages([r[i] for i in idx]).advantages
        assert np.allclose(perm, [base[i] for i in idx], atol=1e-12)
        assume(np.std(r) > 1e-3)
        shifted = group_advantages([x + c for x in r]).advantages
        assert np.allclose(shifted, base, atol=1e-9)

    def test_normalizer_groups(self):
        norm = GroupAdvantageNormalizer()
        out = norm.fit_transform([0.2, 0.4, 0.6, 0.8, 0.1, 0.1], groups=["a"] * 4 + ["b"] * 2)
        assert np.allclose(out[:4], group_advantages([0.2, 0.4, 0.6, 0.8]).advantages)
        assert list(out[4:]) == [0.0, 0.0]
        with pytest.raises(InvalidConfig):
            GroupAdvantageNormalizer(eps=0).fit()


class TestEstimator:
    def test_params_and_predict(self):
        from sklearn.base import clone

        est = CaptionRewardScorer(tau=0.6)
        params = clone(est).get_params()
        assert params["tau"] == 0.6 and params["provider"] == "hashed-bow"
        X = [(CAPTION, SLOTS, CAPTION), ("", SLOTS, CAPTION)]
        pred = est.fit().predict(X)
        assert pred[0] == 1.0 and 0.0 <= pred[1] < 0.1
        assert est.explain(X)[1].penalty.total == pytest.approx(0.25)

    def test_fit_validates(self):
        with pytest.raises(InvalidConfig):
            CaptionRewardScorer(tau=2.0).fit()

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CaptionRewardScorer().predict([(CAPTION, SLOTS, CAPTION)])


def test_tokens_used_for_length():
    assert len(tokenize(CAPTION)) >= 15
