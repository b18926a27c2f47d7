"""SplitMix64, the simulator's only source of randomness.

Recurrence (all arithmetic mod 2**64)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

``below(n)`` draws by rejection: values at or above the largest multiple of
``n`` under 2**64 are discarded, then the result is ``z % n``.
"""

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - (1 << 64) % n
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n

    def uniform_int(self, lo: int, hi: int) -> int:
        """Inclusive range."""
        return lo + self.below(hi - lo + 1)

    def fork(self, label: str) -> "SplitMix64":
        """Independent stream derived from the current state and a label."""
        h = 0
        for b in label.encode():
            h = ((h ^ b) * 0x100000001B3) & MASK
        return SplitMix64(self.next_u64() ^ h)
