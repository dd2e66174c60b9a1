import numpy as np
import pytest

from pcgs.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def small_bundle():
    """Shared small scene: fast to encode, exercises all three event kinds."""
    spec = SynthSpec(
        num_anchors=600,
        offsets_per_anchor=4,
        feat_dim=12,
        num_levels=3,
        seed=1234,
        anchor_targets=(0.5, 0.8, 1.0),
        gauss_targets=(0.3, 0.55, 0.8),
    )
    return generate(spec)


@pytest.fixture(scope="session")
def small_encoded(small_bundle):
    from pcgs.pipeline import encode_bundle

    return encode_bundle(small_bundle, keep_level_lattices=True, audit=True)


@pytest.fixture()
def rng():
    return np.random.default_rng(99)
