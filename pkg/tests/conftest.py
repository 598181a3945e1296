import pytest

from reflectgen.config import (
    benchmark_editor,
    benchmark_gen_spec,
    benchmark_grpo_config,
    benchmark_training_world,
    load_benchmark_corpus,
)
from reflectgen.grpo import train_phase1
from reflectgen.policy import ActorPolicy
from reflectgen.scenegraph import parse_prompt


@pytest.fixture(scope="session")
def benchmark_corpus():
    return load_benchmark_corpus()


@pytest.fixture(scope="session")
def gen_spec():
    return benchmark_gen_spec()


@pytest.fixture(scope="session")
def editor():
    return benchmark_editor()


@pytest.fixture(scope="session")
def training_world():
    return benchmark_training_world()


@pytest.fixture(scope="session")
def phase1_result(training_world, editor):
    """Phase-1 training run shared by the training-dependent tests; runs once."""
    config = benchmark_grpo_config(steps=1500, seed=11)
    return train_phase1(training_world, ActorPolicy.initial(), editor, config)


@pytest.fixture(scope="session")
def trained_policy(phase1_result):
    return phase1_result.policy


@pytest.fixture
def small_reqs():
    return parse_prompt(
        "red lantern hanging from wooden building; stone tower behind old castle; "
        "small boat on quiet river; a cat; night scene"
    )
