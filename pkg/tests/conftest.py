import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "src"))

from underwater_dal.datastore.manifest import SampleSet, assign_split, write_dataset  # noqa: E402
from underwater_dal.formation.synthesis import make_procedural_scenes, synthesize_dataset  # noqa: E402
from underwater_dal.formation.water_types import load_water_types  # noqa: E402
from underwater_dal.models.networks import ArchitectureConfig  # noqa: E402

TINY_ARCH = dict(height=16, width=16, base_channels=2, levels=2, classifier_widths=(1,))


def procedural_count_covering(minimum):
    """Smallest procedural scene count whose hash split holds at least ``minimum[split]`` scenes per split"""
    seen = {split: 0 for split in minimum}
    count = 0
    while any(seen[s] < minimum[s] for s in minimum):
        split = assign_split(f"p{count:05d}")
        if split in seen:
            seen[split] += 1
        count += 1
    return count


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def water_types():
    return load_water_types()


@pytest.fixture
def tiny_config():
    return ArchitectureConfig(**TINY_ARCH).validate()


@pytest.fixture
def scenes():
    return make_procedural_scenes(4, 16, seed=7)


@pytest.fixture
def tiny_sets(scenes, water_types):
    """Train and validation sets split by scene, one draw per water type"""
    samples = synthesize_dataset(scenes, water_types, draws_per_type=1, seed=3)
    full = SampleSet.from_samples(scenes, samples)
    is_val = np.array([sid == scenes[-1].scene_id for sid in full.scene_ids])
    return full.subset(np.flatnonzero(~is_val)), full.subset(np.flatnonzero(is_val))


@pytest.fixture
def dataset_dir(tmp_path, water_types):
    """One procedural scene, six draws per water type, written with its manifest"""
    one = make_procedural_scenes(1, 16, seed=5)
    samples = synthesize_dataset(one, water_types, draws_per_type=6, seed=0)
    write_dataset(one, samples, str(tmp_path / "data"))
    return tmp_path / "data"
