import numpy as np
import pytest

from stiffnet import mechanism as mech


@pytest.fixture(scope="session")
def h2o2():
    return mech.load_mechanism("h2o2")


@pytest.fixture(scope="session")
def robertson():
    return mech.load_mechanism("robertson")


@pytest.fixture(scope="session")
def decay():
    return mech.load_mechanism("linear_decay")


def make_mechanism(species, reactions, cp=1000.0, roles=None, name="toy"):
    """Build a Mechanism from ``[(name, W, h)]`` and ``[(reac, prod, A, beta, Ea)]``."""
    return mech.Mechanism(
        tuple(mech.SpeciesSpec(*s) for s in species),
        tuple(mech.ReactionSpec(*r) for r in reactions),
        cp,
        mech.GAS_CONSTANT,
        roles or {},
        name,
    )


def random_states(m, n, seed=0):
    rng = np.random.default_rng(seed)
    T = rng.uniform(1000.0, 3000.0, n)
    rho = 10.0 ** rng.uniform(-6.0, -1.0, (n, m.n_species))
    return np.column_stack([T, rho])


@pytest.fixture(scope="session")
def decay_trajectory(decay):
    from stiffnet.integrator import IntegratorConfig, integrate

    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-15)
    return integrate(decay, mech.State(300.0, [1.0, 0.0]), 2.0, 0.01, cfg)


@pytest.fixture(scope="session")
def decay_split(decay_trajectory):
    """Derivative-approach pairs from the first 201 samples, split 90/10."""
    from stiffnet.dataset import PairSet, balance_by_replication, split_validation
    from stiffnet.integrator import Trajectory

    head = Trajectory(decay_trajectory.times[:201], decay_trajectory.values[:201], decay_trajectory.channels, 0.01)
    ds = balance_by_replication([PairSet.from_trajectory(head, "derivative", 0)], approach="derivative", channels=head.channels)
    return split_validation(ds, 0.1, seed=0)


@pytest.fixture(scope="session")
def decay_surrogate(decay_split):
    from stiffnet.trainer import TrainConfig, train_parallel

    train, val = decay_split
    sur, hists = train_parallel(train, val, TrainConfig(depth=4, width=10, max_iters=2000, patience=400), workers=1)
    return sur, hists
