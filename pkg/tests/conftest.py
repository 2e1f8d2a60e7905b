import pytest

from leaklab.arch import Input, SANDBOX_SIZE, generate_inputs
from leaklab.isa import build_action_space


@pytest.fixture(scope="session")
def default_space():
    return build_action_space()


@pytest.fixture(scope="session")
def inputs20():
    return generate_inputs(seed=42, count=20)


def make_input(r0=0, r1=0, r2=0, mem_byte=0) -> Input:
    return Input(r0=r0, r1=r1, r2=r2, mem=bytes([mem_byte]) * SANDBOX_SIZE)
