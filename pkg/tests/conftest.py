import numpy as np
import pytest

from ildata.dataset import Dataset, Trajectory


def make_traj(states, actions=None, success=True, seed=0, metadata=None):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if actions is None:
        actions = np.diff(states, axis=0)
    return Trajectory(states, np.asarray(actions, dtype=np.float64), success, seed, metadata or {})


def make_dataset(trajs, env_id="test"):
    return Dataset(list(trajs), env_id, trajs[0].states.shape[1], trajs[0].actions.shape[1])


def random_dataset(rng, n_traj, max_len, d_s=2, d_a=2, grid=None):
    """Random dataset; ``grid`` snaps states to a lattice so exact duplicates occur."""
    trajs = []
    for i in range(n_traj):
        T = int(rng.integers(1, max_len + 1))
        s = rng.normal(size=(T + 1, d_s))
        if grid:
            s = np.round(s / grid) * grid
        a = rng.normal(size=(T, d_a))
        trajs.append(Trajectory(s, a, bool(rng.integers(2)), i, {"sigma_s": 0.0, "sigma_p": 0.0}))
    return Dataset(trajs, "random", d_s, d_a)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
