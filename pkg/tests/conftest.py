import pytest

from lara.simulation import SynthConfig, generate_collection


@pytest.fixture(scope="session")
def small_synth():
    """A small synthetic collection with a miscalibrated probability channel."""
    return generate_collection(
        SynthConfig(topics=5, docs_per_topic=24, systems=6, a=4.0, b=-1.0, seed=7)
    )


@pytest.fixture(scope="session")
def small_collection(small_synth):
    return small_synth.collection
