import os

import numpy as np
import pytest

from underwater_dal.formation.model import (
    DegradationParams,
    SceneSample,
    compute_transmission,
    degrade_image,
    invert_degradation,
)
from underwater_dal.formation.synthesis import (
    SynthesisConfig,
    derive_sample_seed,
    load_scenes,
    make_procedural_scenes,
    normalize_depth,
    sample_degradation_params,
    save_scene,
    synthesize_dataset,
)
from underwater_dal.formation.water_types import MERGED_LABELS, NUM_CLASSES, WaterTypeSpec, load_water_types
from underwater_dal.lib.errors import ConfigError, IllConditionedError, InvalidInputError

IDENTITY = DegradationParams((0.2, 0.2, 0.2), 1.0, 0.0)


def uniform_spec(n, class_id=0):
    return WaterTypeSpec(class_id, MERGED_LABELS[class_id], np.full(3, n))


def flat_scene(value, depth, size=4, scene_id="s"):
    return SceneSample(np.full((size, size, 3), value), np.full((size, size), depth), scene_id)


def test_packaged_table_has_six_merged_classes(water_types):
    assert len(water_types) == NUM_CLASSES
    assert [spec.label for spec in water_types] == list(MERGED_LABELS)
    for spec in water_types:
        assert np.all(spec.n_coeff > 0) and np.all(spec.n_coeff <= 1)
    # merged rows are the channel means of their member types
    np.testing.assert_allclose(water_types[0].n_coeff, np.mean([[0.75, 0.885, 0.875], [0.71, 0.82, 0.80]], axis=0))
    np.testing.assert_allclose(
        water_types[4].n_coeff, np.mean([[0.85, 0.961, 0.982], [0.84, 0.955, 0.975], [0.83, 0.95, 0.968]], axis=0), atol=5e-5
    )
    np.testing.assert_allclose(water_types[5].n_coeff, np.mean([[0.80, 0.925, 0.94], [0.75, 0.885, 0.89]], axis=0))


def test_beta_is_log10_of_residual_ratio():
    spec = WaterTypeSpec.from_beta(3, [0.1, 0.2, 0.5])
    np.testing.assert_allclose(spec.n_coeff, 10.0 ** -np.array([0.1, 0.2, 0.5]))
    np.testing.assert_allclose(spec.beta, [0.1, 0.2, 0.5])


@pytest.mark.parametrize("n", [[0.0, 0.5, 0.5], [0.5, 1.2, 0.5], [0.5, 0.5]])
def test_invalid_coefficients_rejected(n):
    with pytest.raises(ConfigError):
        WaterTypeSpec(0, "1,3", np.array(n))


def test_mismatched_label_rejected():
    with pytest.raises(ConfigError):
        WaterTypeSpec(1, "1,3", np.full(3, 0.5))


def test_malformed_table_rejected(tmp_path):
    path = tmp_path / "table.txt"
    path.write_text("0 1,3 0.7 0.8\n")
    with pytest.raises(ConfigError):
        load_water_types(str(path))


def test_incomplete_table_rejected(tmp_path):
    path = tmp_path / "table.txt"
    path.write_text("# only one class\n0 1,3 0.7 0.8 0.8\n")
    with pytest.raises(ConfigError):
        load_water_types(str(path))


def test_transmission_values():
    depth = np.full((3, 3), 3.0)
    np.testing.assert_allclose(compute_transmission(uniform_spec(0.5), depth), 0.125, atol=1e-12)
    np.testing.assert_array_equal(compute_transmission(uniform_spec(1.0), depth), 1.0)
    np.testing.assert_array_equal(compute_transmission(uniform_spec(0.3), np.zeros((3, 3))), 1.0)


def test_transmission_rejects_negative_depth():
    with pytest.raises(InvalidInputError):
        compute_transmission(uniform_spec(0.5), np.array([[1.0, -0.1]]))


def test_scene_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        SceneSample(np.zeros((4, 4, 3)), np.full((4, 4), -1.0), "neg")
    with pytest.raises(InvalidInputError):
        SceneSample(np.zeros((4, 4, 3)), np.zeros((4, 5)), "shape")
    with pytest.raises(InvalidInputError):
        SceneSample(np.full((4, 4, 3), 1.5), np.zeros((4, 4)), "range")


def test_degrade_worked_example():
    sample = degrade_image(flat_scene(0.8, 2.0), uniform_spec(0.5), IDENTITY)
    # T = 0.25, U = 0.8 * 0.25 + 0.2 * 0.75
    np.testing.assert_allclose(sample.degraded, 0.35, atol=1e-9)
    assert sample.class_id == 0 and sample.scene_id == "s"


def test_zero_depth_is_identity():
    scene = SceneSample(np.random.default_rng(0).uniform(size=(5, 5, 3)), np.zeros((5, 5)), "z")
    sample = degrade_image(scene, uniform_spec(0.4), IDENTITY)
    np.testing.assert_array_equal(sample.degraded, scene.clear)


def test_full_attenuation_returns_background():
    params = DegradationParams((0.1, 0.5, 0.9), 1.0, 0.0)
    sample = degrade_image(flat_scene(0.7, 10.0), uniform_spec(1e-6), params)
    np.testing.assert_allclose(sample.degraded, np.broadcast_to([0.1, 0.5, 0.9], (4, 4, 3)), atol=1e-12)


def test_degraded_stays_between_clear_and_background(water_types):
    rng = np.random.default_rng(4)
    for _ in range(20):
        scene = SceneSample(rng.uniform(size=(6, 6, 3)), rng.uniform(0, 5, size=(6, 6)), "r")
        params = sample_degradation_params(rng, SynthesisConfig())
        spec = water_types[int(rng.integers(NUM_CLASSES))]
        out = degrade_image(scene, spec, params).degraded
        b = np.asarray(params.background)
        assert np.all(out >= np.minimum(scene.clear, b))
        assert np.all(out <= np.maximum(scene.clear, b))


def test_brighter_than_background_darkens_with_depth():
    depth = np.tile(np.linspace(0.0, 5.0, 8), (8, 1))
    scene = SceneSample(np.full((8, 8, 3), 0.9), depth, "ramp")
    params = DegradationParams((0.1, 0.1, 0.1), 1.0, 0.0)
    out = degrade_image(scene, uniform_spec(0.7), params).degraded
    assert np.all(np.diff(out[..., 0], axis=1) <= 0)


def test_depth_transform_is_affine():
    params = DegradationParams((0.2, 0.2, 0.2), 2.0, 0.5)
    np.testing.assert_allclose(params.transformed_depth(np.array([0.0, 1.0])), [0.5, 2.5])


def test_inversion_worked_example():
    degraded = np.full((2, 2, 3), 0.35)
    clear = invert_degradation(degraded, uniform_spec(0.5), IDENTITY, np.full((2, 2), 2.0))
    np.testing.assert_allclose(clear, 0.8, atol=1e-12)


def test_inversion_recovers_clear_image(water_types):
    rng = np.random.default_rng(11)
    config = SynthesisConfig()
    for i in range(100):
        scene = SceneSample(rng.uniform(size=(8, 8, 3)), rng.uniform(0, 1, size=(8, 8)), f"s{i}")
        spec = water_types[i % NUM_CLASSES]
        params = sample_degradation_params(rng, config)
        degraded = degrade_image(scene, spec, params).degraded
        recovered = invert_degradation(degraded, spec, params, scene.depth)
        np.testing.assert_allclose(recovered, scene.clear, atol=1e-6)


def test_inversion_rejects_vanishing_transmission():
    depth = np.zeros((3, 3))
    depth[0, 0] = 5.0
    params = DegradationParams((0.2, 0.2, 0.2), 1.0, 0.0)
    with pytest.raises(IllConditionedError) as info:
        invert_degradation(np.full((3, 3, 3), 0.2), uniform_spec(0.1), params, depth)
    assert info.value.pixel_count == 3


def test_degenerate_ranges_give_fixed_params():
    config = SynthesisConfig(0.4, 0.4, 2.0, 2.0, 0.25, 0.25)
    params = sample_degradation_params(np.random.default_rng(0), config)
    assert params.background == (0.4, 0.4, 0.4)
    assert params.depth_scale == 2.0 and params.depth_offset == 0.25


def test_parameter_draws_follow_their_range():
    config = SynthesisConfig(background_lo=0.0, background_hi=1.0)
    rng = np.random.default_rng(2)
    backgrounds = np.array([sample_degradation_params(rng, config).background for _ in range(10000)])
    assert backgrounds.min() >= 0.0 and backgrounds.max() <= 1.0
    assert abs(backgrounds.mean() - 0.5) < 0.01


def test_same_seed_same_params():
    a = sample_degradation_params(np.random.default_rng(5), SynthesisConfig())
    b = sample_degradation_params(np.random.default_rng(5), SynthesisConfig())
    assert a == b


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(background_lo=0.8, background_hi=0.2),
        dict(scale_lo=3.0, scale_hi=1.0),
        dict(background_hi=1.5),
        dict(scale_lo=0.0),
        dict(offset_lo=-1.0),
    ],
)
def test_invalid_synthesis_config(kwargs):
    with pytest.raises(ConfigError):
        SynthesisConfig(**kwargs).validate()


def test_unknown_synthesis_key():
    with pytest.raises(ConfigError):
        SynthesisConfig.from_dict({"background": 0.5})


def test_sample_seed_depends_on_every_key_part():
    base = derive_sample_seed(0, "a", 1, 2)
    assert base == derive_sample_seed(0, "a", 1, 2)
    assert len({base, derive_sample_seed(1, "a", 1, 2), derive_sample_seed(0, "b", 1, 2),
                derive_sample_seed(0, "a", 2, 2), derive_sample_seed(0, "a", 1, 3)}) == 5


def test_normalize_depth():
    np.testing.assert_allclose(normalize_depth(np.array([[2.0, 4.0], [3.0, 6.0]])), [[0.0, 0.5], [0.25, 1.0]])
    np.testing.assert_array_equal(normalize_depth(np.full((2, 2), 7.0)), 0.0)


def test_one_scene_six_draws_gives_36_samples(water_types):
    samples = synthesize_dataset(make_procedural_scenes(1, 8, seed=0), water_types, draws_per_type=6)
    assert len(samples) == 36
    counts = np.bincount([s.class_id for s in samples], minlength=NUM_CLASSES)
    np.testing.assert_array_equal(counts, 6)
    assert sorted({s.draw_index for s in samples}) == list(range(6))


def test_synthesis_counts_scale(water_types):
    samples = synthesize_dataset(make_procedural_scenes(10, 8, seed=0), water_types, draws_per_type=2)
    assert len(samples) == 120
    np.testing.assert_array_equal(np.bincount([s.class_id for s in samples]), 20)


def test_synthesis_is_deterministic_and_order_free(water_types):
    scenes = make_procedural_scenes(3, 8, seed=1)
    first = synthesize_dataset(scenes, water_types, draws_per_type=2, seed=9)
    again = synthesize_dataset(scenes, water_types, draws_per_type=2, seed=9)
    reversed_run = synthesize_dataset(scenes[::-1], water_types, draws_per_type=2, seed=9)
    key = lambda s: (s.scene_id, s.class_id, s.draw_index)  # noqa: E731
    by_key = {key(s): s for s in reversed_run}
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a.degraded, b.degraded)
        assert a.params == b.params
        np.testing.assert_array_equal(a.degraded, by_key[key(a)].degraded)


def test_synthesis_seed_changes_output(water_types):
    scenes = make_procedural_scenes(1, 8, seed=1)
    a = synthesize_dataset(scenes, water_types, draws_per_type=1, seed=0)
    b = synthesize_dataset(scenes, water_types, draws_per_type=1, seed=1)
    assert any(x.params != y.params for x, y in zip(a, b))


def test_synthesis_rejects_empty_input(water_types):
    with pytest.raises(ConfigError):
        synthesize_dataset([], water_types)
    with pytest.raises(ConfigError):
        synthesize_dataset(make_procedural_scenes(1, 8, seed=0), water_types, draws_per_type=0)


def test_procedural_scenes_are_valid_and_reproducible():
    a = make_procedural_scenes(2, 12, seed=3)
    b = make_procedural_scenes(2, 12, seed=3)
    assert [s.scene_id for s in a] == ["p00000", "p00001"]
    for x, y in zip(a, b):
        assert x.clear.shape == (12, 12, 3) and x.depth.shape == (12, 12)
        assert x.depth.min() >= 1.0 and x.depth.max() <= 10.0
        np.testing.assert_array_equal(x.clear, y.clear)


def test_scene_files_round_trip(tmp_path):
    scene = make_procedural_scenes(1, 10, seed=2)[0]
    save_scene(scene, str(tmp_path))
    (loaded,) = load_scenes(str(tmp_path))
    assert loaded.scene_id == scene.scene_id
    np.testing.assert_allclose(loaded.clear, scene.clear, atol=0.5 / 255 + 1e-12)
    np.testing.assert_allclose(loaded.depth, scene.depth, atol=0.0005 + 1e-12)


def test_scene_without_depth_rejected(tmp_path):
    scene = make_procedural_scenes(1, 6, seed=2)[0]
    rgb, depth = save_scene(scene, str(tmp_path))
    os.remove(depth)
    with pytest.raises(InvalidInputError):
        load_scenes(str(tmp_path))
