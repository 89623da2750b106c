import dataclasses

import pytest

from leakhunt import synth
from leakhunt.network import LeakParams
from leakhunt.scenariodb import build_random_db, build_scenario_db


@pytest.fixture(scope="session")
def dma3():
    return synth.load_fixture("dma3")


@pytest.fixture(scope="session")
def dma5():
    return synth.load_fixture("dma5")


@pytest.fixture(scope="session")
def triangle():
    return synth.load_fixture("triangle")


@pytest.fixture(scope="session")
def dma3_sdb(dma3):
    return build_scenario_db(dma3)


@pytest.fixture(scope="session")
def dma3_rdb(dma3):
    return build_random_db(dma3, n_events=300, seed=11)


def without_leakage(net):
    pipes = {k: dataclasses.replace(p, leak=LeakParams(p.leak.model, 0.0, p.leak.alpha, 0.0)) for k, p in net.pipes.items()}
    return dataclasses.replace(net, pipes=pipes)
