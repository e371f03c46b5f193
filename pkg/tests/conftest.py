import numpy as np
import pytest

from canopynbv.geometry import RoiBounds


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timing-sensitive tests are stable."""
    from canopynbv.scene import generate_scene
    from canopynbv.sensor import CameraModel, DetectorModel, render_view
    from canopynbv.geometry import CameraPose
    from canopynbv.semantic_octree import SemanticOctree
    from canopynbv.planning import volumetric_gain

    scene = generate_scene(1)
    cam = CameraModel(ray_rows=4, ray_cols=4)
    pose = CameraPose.look_at(scene.bounds.center - np.array([0, 1.0, 0]),
                              scene.bounds.center)
    tree = SemanticOctree(scene.bounds)
    cloud = render_view(scene, pose, cam, DetectorModel(), np.random.default_rng(0))
    tree.insert_point_cloud(pose.position, cloud)
    volumetric_gain(pose, tree, cam, 2, 2)


@pytest.fixture
def small_bounds():
    """10x10x10 grid at 0.1 m resolution."""
    return RoiBounds(np.zeros(3), np.ones(3), 0.1)


@pytest.fixture
def cube50_bounds():
    """50^3 grid at the production resolution."""
    return RoiBounds(np.zeros(3), np.full(3, 2.0), 0.04)
