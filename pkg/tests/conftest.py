import random

import pytest

from dualdrive.core import (
    DrivingStyle,
    ExperienceDescription,
    Intention,
    MemoryUnit,
    MetaAction,
    ScenarioDescription,
)

STYLES = list(DrivingStyle)
INTENTIONS = list(Intention)
ACTIONS = list(MetaAction)

INSTRUCTION_POOL = ["", "I will be slower", "go ahead", "wait for me", "I will be faster"]
EHMI_POOL = ["", "I will be Faster", "I will be Slower", "Maintaining"]


def random_scenario(rng: random.Random) -> ScenarioDescription:
    vals = [
        rng.uniform(-45.0, 15.0),
        rng.uniform(-15.0, 15.0),
        rng.uniform(-5.0, 5.0),
        rng.uniform(-5.0, 5.0),
        rng.uniform(-45.0, 15.0),
        rng.uniform(-15.0, 15.0),
        rng.uniform(-5.0, 5.0),
        rng.uniform(-5.0, 5.0),
        rng.uniform(0.0, 10.0),
    ]
    return ScenarioDescription(tuple(vals))


def random_experience(rng: random.Random, style=None) -> ExperienceDescription:
    return ExperienceDescription(
        intention=rng.choice(INTENTIONS),
        style=style if style is not None else rng.choice(STYLES),
        instruction=rng.choice(INSTRUCTION_POOL),
        ehmi=rng.choice(EHMI_POOL),
    )


def random_unit(rng: random.Random, episode=None, frame=None, style=None) -> MemoryUnit:
    return MemoryUnit(
        scenario=random_scenario(rng),
        experience=random_experience(rng, style=style),
        action=rng.choice(ACTIONS),
        episode_id=episode if episode is not None else rng.randrange(10_000),
        frame_index=frame if frame is not None else rng.randrange(10_000),
    )


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xD1CE)
