"""World sampling, exact densities, gap semantics, and spec/dataset files."""
import json
import math

import numpy as np
import pytest

from oracles import gap_density_brute_force, world_density_brute_force
from synthgap.common import ConfigurationError, ContractError, Origin, UndefinedRatioError
from synthgap.worlds import (
    Dataset,
    GapSpec,
    StyleComponent,
    TokenAlphabet,
    TokenPrior,
    WorldSpec,
    gap_from_dict,
    gap_to_dict,
    identity_gap,
    log_density,
    make_artifact_style,
    oracle_ratio,
    sample_real,
    sample_synth,
    world_from_dict,
    world_to_dict,
)


class TestSpecValidation:
    def test_alphabet_rejects_duplicates(self):
        with pytest.raises(ConfigurationError):
            TokenAlphabet(("a", "a", "b"))

    def test_alphabet_size_bounds(self):
        with pytest.raises(ConfigurationError):
            TokenAlphabet(("a",))
        with pytest.raises(ConfigurationError):
            TokenAlphabet(tuple("abcdefghijklmnopq"))

    def test_style_weights_must_sum_to_one(self, tiny_world):
        styles = [StyleComponent(0, tiny_world.styles[0].frame_mean, 1.0, 0.5)]
        with pytest.raises(ConfigurationError):
            WorldSpec(alphabet=tiny_world.alphabet, styles=styles,
                      token_prior=tiny_world.token_prior, frame_rate=3, noise_sigma=0.4)

    def test_prior_rows_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            TokenPrior(1, 2, np.array([0.5, 0.4]), np.array([0.5, 0.5]))

    def test_gap_requires_artifact_style_when_weighted(self, tiny_world):
        with pytest.raises(ConfigurationError):
            GapSpec(base=tiny_world, artifact_weight=0.1)

    def test_gap_rejects_unknown_dropped_style(self, tiny_world):
        with pytest.raises(ConfigurationError):
            GapSpec(base=tiny_world, dropped_styles=frozenset({7}))

    def test_gap_rejects_out_of_range_knobs(self, tiny_world):
        art = make_artifact_style(tiny_world, (6.0, 6.0))
        with pytest.raises(ConfigurationError):
            GapSpec(base=tiny_world, artifact_weight=0.7, artifact_style=art)
        with pytest.raises(ConfigurationError):
            GapSpec(base=tiny_world, label_corruption_rate=0.9)


class TestSampling:
    def test_single_style_world_sets_one_style_id(self, single_style_world):
        data = sample_real(single_style_world, 3, seed=7)
        assert len(data) == 3
        assert all(s.style_id == 0 for s in data)
        assert all(s.origin == Origin.REAL for s in data)

    def test_same_seed_gives_byte_identical_datasets(self, tiny_world, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        sample_real(tiny_world, 50, seed=7).to_jsonl(a)
        sample_real(tiny_world, 50, seed=7).to_jsonl(b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self, tiny_world):
        a = sample_real(tiny_world, 10, seed=1)
        b = sample_real(tiny_world, 10, seed=2)
        assert any(not np.array_equal(x.features, y.features) for x, y in zip(a, b))

    def test_sample_shapes_follow_frame_rate(self, tiny_world):
        for s in sample_real(tiny_world, 20, seed=3):
            assert s.features.shape == (tiny_world.frame_rate * len(s.tokens), tiny_world.dim)
            assert 1 <= len(s.tokens) <= 3

    def test_empirical_frame_means_match_spec(self, single_style_world):
        # Monte Carlo check against the spec parameters: per-token frame mean
        # within 3 sigma / sqrt(n_frames).
        data = sample_real(single_style_world, 10_000, seed=11)
        style = single_style_world.styles[0]
        sigma = single_style_world.noise_sigma * style.frame_cov_scale
        for tok in range(single_style_world.alphabet.size):
            frames = []
            for s in data:
                for i, t in enumerate(s.tokens):
                    if t == tok:
                        start = i * single_style_world.frame_rate
                        frames.append(s.features[start:start + single_style_world.frame_rate])
            frames = np.concatenate(frames)
            tol = 3.0 * sigma / math.sqrt(len(frames))
            assert np.all(np.abs(frames.mean(axis=0) - style.frame_mean[tok]) < tol)

    def test_requires_positive_count(self, tiny_world):
        with pytest.raises(ContractError):
            sample_real(tiny_world, 0, seed=1)

    def test_dropped_styles_never_emitted(self, tiny_world):
        gap = GapSpec(base=tiny_world, dropped_styles=frozenset({1}))
        data = sample_synth(gap, 500, seed=5)
        assert all(s.style_id != 1 for s in data)

    def test_artifact_fraction_concentrates(self, tiny_world):
        gap = GapSpec(base=tiny_world, artifact_weight=0.2,
                      artifact_style=make_artifact_style(tiny_world, (6.0, 6.0)))
        data = sample_synth(gap, 10_000, seed=9)
        artifact_id = gap.artifact_style.id
        frac = sum(1 for s in data if s.style_id == artifact_id) / len(data)
        assert abs(frac - 0.2) < 0.02

    def test_synthetic_origin_tag(self, gapped_world):
        assert all(s.origin == Origin.SYNTHETIC for s in sample_synth(gapped_world, 10, seed=0))

    def test_corruption_changes_labels_not_features(self, single_style_world):
        gap = GapSpec(base=single_style_world, label_corruption_rate=0.5)
        clean = GapSpec(base=single_style_world)
        corrupted = sample_synth(gap, 400, seed=21)
        baseline = sample_synth(clean, 400, seed=21)
        # identical rng path up to the corruption draws -> same first features
        assert np.allclose(corrupted[0].features.shape, baseline[0].features.shape)
        changed = sum(a.tokens != b.tokens for a, b in zip(corrupted, baseline))
        assert changed > 100  # rate 0.5 over ~1.3 tokens per draw


class TestLogDensity:
    def test_single_style_closed_form(self, single_style_world):
        s = sample_real(single_style_world, 1, seed=2)[0]
        lp = log_density(single_style_world, s.features, s.tokens)
        style = single_style_world.styles[0]
        sigma = single_style_world.noise_sigma
        means = np.repeat(style.frame_mean[list(s.tokens)], single_style_world.frame_rate, axis=0)
        expected = single_style_world.token_prior.log_prob(s.tokens)
        expected += float(-0.5 * ((s.features - means) ** 2).sum() / sigma**2
                          - s.features.size * (0.5 * math.log(2 * math.pi) + math.log(sigma)))
        assert lp == pytest.approx(expected, abs=1e-12)

    def test_identity_gap_density_matches_base_pointwise(self, tiny_world):
        gap = identity_gap(tiny_world)
        for s in sample_real(tiny_world, 25, seed=3):
            assert log_density(gap, s.features, s.tokens) == pytest.approx(
                log_density(tiny_world, s.features, s.tokens), abs=1e-12)

    def test_mixture_matches_independent_sum(self, tiny_world):
        for s in sample_real(tiny_world, 10, seed=4):
            direct = world_density_brute_force(tiny_world, s.features, s.tokens)
            assert log_density(tiny_world, s.features, s.tokens) == pytest.approx(
                math.log(direct), abs=1e-9)

    def test_gap_density_matches_enumeration(self, gapped_world):
        for s in sample_synth(gapped_world, 8, seed=6):
            direct = gap_density_brute_force(gapped_world, s.features, s.tokens)
            assert log_density(gapped_world, s.features, s.tokens) == pytest.approx(
                math.log(direct), abs=1e-9)

    def test_gap_density_with_norepeat_prior_matches_enumeration(self):
        means = np.array([[0.0, 0.0], [2.0, 2.0], [-2.0, 1.0]])
        world = WorldSpec(
            alphabet=TokenAlphabet(("a", "b", "c")),
            styles=[StyleComponent(0, means, 1.0, 1.0)],
            token_prior=TokenPrior(1, 3, np.array([0.3, 0.4, 0.3]),
                                   np.array([0.5, 0.3, 0.2]), no_adjacent_repeats=True),
            frame_rate=2,
            noise_sigma=0.6,
        )
        gap = GapSpec(base=world, label_corruption_rate=0.2)
        for s in sample_synth(gap, 12, seed=8):
            direct = gap_density_brute_force(gap, s.features, s.tokens)
            assert log_density(gap, s.features, s.tokens) == pytest.approx(
                math.log(direct), abs=1e-9)

    def test_unsupported_label_gives_minus_inf(self, tiny_world):
        s = sample_real(tiny_world, 1, seed=5)[0]
        too_long = tuple([0] * 4)  # max_len is 3
        x = np.zeros((tiny_world.frame_rate * 4, tiny_world.dim))
        assert log_density(tiny_world, x, too_long) == -math.inf

    def test_norepeat_prior_zeroes_repeats(self):
        prior = TokenPrior(1, 3, np.array([0.3, 0.4, 0.3]),
                           np.array([0.5, 0.3, 0.2]), no_adjacent_repeats=True)
        assert prior.log_prob((0, 0)) == -math.inf
        assert prior.log_prob((0, 1)) == pytest.approx(
            math.log(0.4) + math.log(0.5) + math.log(0.3 / 0.5))

    def test_dimension_mismatch_raises(self, tiny_world):
        with pytest.raises(ContractError):
            log_density(tiny_world, np.zeros((4, 2)), (0,))  # needs 3 frames
        with pytest.raises(ContractError):
            log_density(tiny_world, np.zeros((3, 5)), (0,))


class TestOracleRatio:
    def test_identity_gap_ratio_is_one(self, tiny_world):
        gap = identity_gap(tiny_world)
        for s in sample_real(tiny_world, 30, seed=12):
            ld = log_density(tiny_world, s.features, s.tokens)
            lg = log_density(gap, s.features, s.tokens)
            assert abs(ld - lg) < 1e-12
            assert oracle_ratio(tiny_world, gap, s.features, s.tokens) == pytest.approx(1.0)

    def test_artifact_region_ratio_is_tiny(self, tiny_world):
        # artifact means are >= 8 sigma outside the base support
        gap = GapSpec(base=tiny_world, artifact_weight=0.2,
                      artifact_style=make_artifact_style(tiny_world, (6.0, 6.0)))
        artifact_id = gap.artifact_style.id
        hits = [s for s in sample_synth(gap, 200, seed=13) if s.style_id == artifact_id]
        assert hits
        for s in hits:
            assert oracle_ratio(tiny_world, gap, s.features, s.tokens) < 1e-3

    def test_under_sampled_style_ratio_above_one(self, tiny_world):
        # weights (0.6, 0.4) -> (0.15, 0.85): style 0 under-sampled; the ratio
        # exceeds 1 exactly where style 0's likelihood dominates style 1's
        gap = GapSpec(base=tiny_world, style_reweight={0: 0.25, 1: 2.125})

        def style_loglik(style, s):
            sigma = tiny_world.noise_sigma * style.frame_cov_scale
            means = np.repeat(style.frame_mean[list(s.tokens)], tiny_world.frame_rate, axis=0)
            return (-0.5 * ((s.features - means) ** 2).sum() / sigma**2
                    - s.features.size * (0.5 * math.log(2 * math.pi) + math.log(sigma)))

        data = sample_real(tiny_world, 300, seed=14)
        dominated = [s for s in data
                     if style_loglik(tiny_world.styles[0], s) > style_loglik(tiny_world.styles[1], s)]
        assert len(dominated) > 100
        for s in dominated:
            assert oracle_ratio(tiny_world, gap, s.features, s.tokens) > 1.0

    def test_zero_proposal_mass_raises(self, single_style_world):
        gap = GapSpec(base=single_style_world)
        # length 3 exceeds the prior's max_len of 2, so the gap has zero mass
        x = np.zeros((3 * single_style_world.frame_rate, single_style_world.dim))
        with pytest.raises(UndefinedRatioError):
            oracle_ratio(single_style_world, gap, x, (0, 0, 0))


class TestNormalization:
    def test_monte_carlo_mass_matches_quadrature_1d(self):
        from scipy import integrate

        world = WorldSpec(
            alphabet=TokenAlphabet(("a", "b")),
            styles=[StyleComponent(0, np.array([[0.0], [1.5]]), 1.0, 1.0)],
            token_prior=TokenPrior(1, 1, np.array([1.0]), np.array([0.6, 0.4])),
            frame_rate=1,
            noise_sigma=0.7,
        )
        lo, hi = -1.0, 1.2
        data = sample_real(world, 120_000, seed=15)
        inside = sum(1 for s in data if s.tokens == (0,) and lo <= s.features[0, 0] <= hi)
        mc = inside / len(data)
        quad, _ = integrate.quad(
            lambda x: math.exp(log_density(world, np.array([[x]]), (0,))), lo, hi)
        assert abs(mc - quad) / quad < 0.02

    def test_monte_carlo_mass_matches_quadrature_2d(self):
        from scipy import integrate

        world = WorldSpec(
            alphabet=TokenAlphabet(("a", "b")),
            styles=[
                StyleComponent(0, np.array([[0.0], [2.0]]), 1.0, 0.5),
                StyleComponent(1, np.array([[0.6], [2.6]]), 1.4, 0.5),
            ],
            token_prior=TokenPrior(1, 1, np.array([1.0]), np.array([0.5, 0.5])),
            frame_rate=2,
            noise_sigma=0.6,
        )
        box = (-0.8, 1.0)
        data = sample_real(world, 120_000, seed=16)
        inside = sum(1 for s in data if s.tokens == (0,)
                     and box[0] <= s.features[0, 0] <= box[1]
                     and box[0] <= s.features[1, 0] <= box[1])
        mc = inside / len(data)
        quad, _ = integrate.dblquad(
            lambda x2, x1: math.exp(log_density(world, np.array([[x1], [x2]]), (0,))),
            box[0], box[1], box[0], box[1])
        assert abs(mc - quad) / quad < 0.02


class TestSerialization:
    def test_world_roundtrip(self, tiny_world):
        d = world_to_dict(tiny_world)
        assert d["schema"] == "gapgen/1"
        back = world_from_dict(json.loads(json.dumps(d)))
        s = sample_real(tiny_world, 1, seed=17)[0]
        assert log_density(back, s.features, s.tokens) == pytest.approx(
            log_density(tiny_world, s.features, s.tokens))

    def test_gap_roundtrip(self, gapped_world):
        d = gap_to_dict(gapped_world)
        back = gap_from_dict(json.loads(json.dumps(d)))
        s = sample_synth(gapped_world, 1, seed=18)[0]
        assert log_density(back, s.features, s.tokens) == pytest.approx(
            log_density(gapped_world, s.features, s.tokens))

    def test_schema_mismatch_rejected(self, tiny_world):
        d = world_to_dict(tiny_world)
        d["schema"] = "gapgen/2"
        with pytest.raises(ConfigurationError):
            world_from_dict(d)

    def test_dataset_jsonl_roundtrip(self, gapped_world, tmp_path):
        data = sample_synth(gapped_world, 20, seed=19)
        data[0].extras = {"D": 0.25, "r": 1.0 / 3.0, "M_at_decision": 2.0}
        path = tmp_path / "data.jsonl"
        data.to_jsonl(path)
        back = Dataset.from_jsonl(path)
        assert len(back) == len(data)
        for a, b in zip(data, back):
            assert a.tokens == b.tokens
            assert a.origin == b.origin
            assert a.style_id == b.style_id
            assert np.array_equal(a.features, b.features)
        assert back[0].extras == {"D": 0.25, "r": 1.0 / 3.0, "M_at_decision": 2.0}
        row = json.loads(path.read_text().splitlines()[0])
        assert set(row) == {"id", "features", "tokens", "origin", "style_id",
                            "D", "r", "M_at_decision"}
