import numpy as np
import pytest

from synthgap.worlds import (
    GapSpec,
    StyleComponent,
    TokenAlphabet,
    TokenPrior,
    WorldSpec,
    make_artifact_style,
)


@pytest.fixture(scope="session")
def tiny_world() -> WorldSpec:
    """Two styles, 4 tokens, 2-d frames, 3 frames per token."""
    corners = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    return WorldSpec(
        alphabet=TokenAlphabet(("a", "b", "c", "d")),
        styles=[
            StyleComponent(id=0, frame_mean=corners, frame_cov_scale=1.0, weight=0.6),
            StyleComponent(id=1, frame_mean=corners + np.array([0.3, -0.2]),
                           frame_cov_scale=1.3, weight=0.4),
        ],
        token_prior=TokenPrior(min_len=1, max_len=3,
                               length_probs=np.array([0.5, 0.3, 0.2]),
                               token_probs=np.array([0.4, 0.3, 0.2, 0.1])),
        frame_rate=3,
        noise_sigma=0.4,
    )


@pytest.fixture(scope="session")
def single_style_world() -> WorldSpec:
    means = np.array([[0.0, 0.0], [2.0, 2.0]])
    return WorldSpec(
        alphabet=TokenAlphabet(("a", "b")),
        styles=[StyleComponent(id=0, frame_mean=means, frame_cov_scale=1.0, weight=1.0)],
        token_prior=TokenPrior(min_len=1, max_len=2,
                               length_probs=np.array([0.7, 0.3]),
                               token_probs=np.array([0.5, 0.5])),
        frame_rate=2,
        noise_sigma=0.5,
    )


@pytest.fixture(scope="session")
def gapped_world(tiny_world) -> GapSpec:
    return GapSpec(
        base=tiny_world,
        artifact_weight=0.2,
        artifact_style=make_artifact_style(tiny_world, location=(6.0, 6.0)),
        style_reweight={0: 0.5, 1: 1.5},
        label_corruption_rate=0.1,
    )
