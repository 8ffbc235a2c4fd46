import numpy as np
import pytest

from semfilter.kinematics import Joint, KinematicChain, JointState, fr3_chain, transform
from semfilter.semantics import FixtureClient
from semfilter.simulation import GeometryCache
from semfilter.synthetic import build_demo_scene
from semfilter.scene import load_scene


def planar_two_link(l1: float = 1.0, l2: float = 0.5) -> tuple[KinematicChain, JointState]:
    """Two revolute joints about +z in the x-y plane."""
    joints = (
        Joint(origin=np.eye(4), axis=np.array([0.0, 0.0, 1.0])),
        Joint(origin=transform(np.eye(3), (l1, 0.0, 0.0)), axis=np.array([0.0, 0.0, 1.0])),
    )
    chain = KinematicChain(joints=joints, ee_offset=transform(np.eye(3), (l2, 0.0, 0.0)), name="planar2")
    state = JointState(
        q=np.zeros(2),
        limits_lo=np.array([-np.pi, -np.pi]),
        limits_hi=np.array([np.pi, np.pi]),
        vel_limit=np.array([2.0, 2.0]),
    )
    return chain, state


@pytest.fixture(scope="session")
def fr3():
    return fr3_chain()


@pytest.fixture(scope="session")
def planar2():
    return planar_two_link()


@pytest.fixture(scope="session")
def scenes_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    for scene_id in ("books", "laptop_books", "balloons_towel"):
        build_demo_scene(scene_id, root, seed=0)
    return root


@pytest.fixture(scope="session")
def scenes(scenes_dir):
    return {
        scene_id: load_scene(scenes_dir / f"{scene_id}.json")
        for scene_id in ("books", "laptop_books", "balloons_towel")
    }


@pytest.fixture(scope="session")
def geometry_cache():
    # Shared across the whole run so each (scene, object, relationship)
    # fits exactly once.
    return GeometryCache()


@pytest.fixture()
def fixture_client():
    return FixtureClient.default()
