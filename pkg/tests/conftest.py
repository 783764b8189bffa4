import numpy as np
import pytest

from viewplan.geometry import CameraIntrinsics, Pose
from viewplan.pointcloud import cloud_from_pointmaps
from viewplan.scenes import make_synthetic_scene


def random_pose(rng, spread=1.0):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Pose(r, rng.normal(scale=spread, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def k100():
    return CameraIntrinsics(100.0, 100, 100)


@pytest.fixture(scope="session")
def occluder():
    return make_synthetic_scene("occluder", 50, 7)


@pytest.fixture(scope="session")
def occluder_setup(occluder):
    """Intrinsics, initial reference-view cloud and reference image at 64x64."""
    k = occluder.intrinsics(64, 64)
    pm = occluder.reference_pointmap(k)
    init = cloud_from_pointmaps([(pm, occluder.reference_pose)])
    ref_rgb, _ = occluder.raycast(occluder.reference_pose, k)
    return k, init, ref_rgb
