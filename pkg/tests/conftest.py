import pytest

from vrsm import mutants
from vrsm.clock import SECOND
from vrsm.sim.world import World


async def idle(node):
    pass


def simulate(director, seed: int = 1, profile=None, epsilon: int = 0, limit_s: float = 120, oracle=None):
    """Run ``director(world)`` on a fresh world with exact clocks; return its result."""
    world = World(seed, profile, epsilon=epsilon, clock_offsets=False)
    if oracle is not None:
        world.oracle = oracle(world)
    try:
        return world.run(director(world), int(limit_s * SECOND))
    finally:
        world.close()


def start(world, name: str, main=idle, group: str = "main"):
    n = world.add_node(name, main, group=group)
    world.start(n)
    return n


@pytest.fixture(autouse=True)
def _no_leftover_mutants():
    mutants.reset()
    yield
    mutants.reset()
