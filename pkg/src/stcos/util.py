import enum

import numpy as np


class AutoNameEnum(str, enum.Enum):
    def _generate_next_value_(name, start, count, last_values):
        return name

    def __str__(self):
        return self.value


def child_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derives `n` independent generators from `rng`.

    Stream i depends only on the state of `rng` and on i, so results computed
    with the children do not depend on the order or thread they run in.
    """
    base = int(rng.integers(2**63))
    return [np.random.default_rng([base, i]) for i in range(n)]


def _sequence(seed: int, key) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def seeded_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for stream `key` of `seed`; distinct keys give independent streams."""
    return np.random.default_rng(_sequence(seed, key))


def seeded_int(seed: int, *key: int) -> int:
    """A 32-bit seed for stream `key` of `seed`."""
    return int(_sequence(seed, key).generate_state(1)[0])
