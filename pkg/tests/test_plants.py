import numpy as np
import pytest

from tpvp.geometry import chamfer_distance
from tpvp.pipeline import SceneVisibility
from tpvp.plants import PLANT_DIAGONAL, generate_synthetic_plant
from tpvp.views import build_view_space


@pytest.mark.parametrize("profile", ["maize_like", "tomato_like"])
def test_deterministic(profile):
    a = generate_synthetic_plant(3, profile)
    b = generate_synthetic_plant(3, profile)
    np.testing.assert_array_equal(a.previous.points, b.previous.points)
    np.testing.assert_array_equal(a.current.points, b.current.points)


@pytest.mark.parametrize("profile", ["maize_like", "tomato_like"])
def test_normalized_and_growing(profile):
    plant = generate_synthetic_plant(0, profile)
    lo, hi = plant.current.bounds()
    assert np.linalg.norm(hi - lo) == pytest.approx(PLANT_DIAGONAL, rel=0.02)
    assert chamfer_distance(plant.previous, plant.current) > 0
    plo, phi = plant.previous.bounds()
    assert np.prod(hi - lo) >= np.prod(phi - plo)


def test_unknown_profile():
    with pytest.raises(ValueError):
        generate_synthetic_plant(0, "cactus_like")


def _mean_visible_fraction(profile, seed):
    plant = generate_synthetic_plant(seed, profile)
    scene = SceneVisibility(plant.current, build_view_space("sphere"))
    return np.mean([scene.coverage([v]) for v in scene.views.ids])


def test_tomato_self_occludes_more_than_maize():
    for seed in range(3):
        assert _mean_visible_fraction("maize_like", seed) > _mean_visible_fraction("tomato_like", seed)


def test_rotation_keeps_shape():
    plant = generate_synthetic_plant(1)
    rot = plant.rotated(45.0)
    assert len(rot.current) == len(plant.current)
    np.testing.assert_allclose(np.linalg.norm(rot.current.points, axis=1),
                               np.linalg.norm(plant.current.points, axis=1), atol=1e-15)
