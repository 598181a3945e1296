"""Deterministic seeding, draw streams, and canonical serialization.

All randomness in the package flows through this module. Seeds are derived
with a splitmix64-style mixer so results are identical across platforms,
processes, and parallelism degrees. No code path reads wall-clock entropy.
"""

import hashlib
import json
import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(value: int) -> int:
    """splitmix64 finalizer; bijective on 64-bit ints."""
    z = (value + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *labels) -> int:
    """Fold integer or string labels into a parent seed.

    Every independent unit of work (episode, attempt, edit, group entry)
    gets its seed from here, so results never depend on scheduling order.
    """
    state = mix64(seed & _MASK)
    for label in labels:
        if isinstance(label, int):
            state = mix64(state ^ (label & _MASK))
        else:
            digest = hashlib.sha256(str(label).encode("utf-8")).digest()
            state = mix64(state ^ int.from_bytes(digest[:8], "big"))
    return state


class DrawStream:
    """Counter-based uniform draw stream.

    Draws are pure functions of (seed, counter); every raw draw is recorded
    in ``trace`` so a consumer can count and replay stochastic decisions.
    """

    __slots__ = ("seed", "index", "trace")

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self.index = 0
        self.trace: list[int] = []

    def next_raw(self) -> int:
        value = mix64(self.seed ^ mix64(self.index))
        self.index += 1
        self.trace.append(value)
        return value

    def next_unit(self) -> float:
        return self.next_raw() / 2.0**64

    def bernoulli(self, probability: float) -> bool:
        return self.next_unit() < probability

    def below(self, bound: int) -> int:
        # modulo bias is negligible for the small bounds used here
        return self.next_raw() % bound

    def choice(self, items):
        return items[self.below(len(items))]

    def poisson(self, rate: float) -> int:
        """Poisson draw via CDF inversion; consumes exactly one raw draw."""
        if rate <= 0:
            self.next_raw()
            return 0
        target = self.next_unit()
        term = math.exp(-rate)
        cumulative = term
        count = 0
        ceiling = int(rate + 10.0 * math.sqrt(rate) + 10.0)
        while target > cumulative and count < ceiling:
            count += 1
            term *= rate / count
            cumulative += term
        return count


def canonical_json(payload) -> str:
    """Stable JSON rendering: sorted keys, compact separators, ASCII."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def stable_digest(payload) -> str:
    """Short content digest of any JSON-serializable payload."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]
