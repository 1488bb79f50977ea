"""Pair partitions (perfect matchings) of {1, ..., l} and their non-crossing
subfamily.

These are the index sets of every moment sum in the library: Gaussian Wick
sums range over all pair partitions, semicircular moment formulas over the
non-crossing ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb


class PartitionError(ValueError):
    """Domain error for pair-partition operations (odd length, crossing
    input where a non-crossing one is required, malformed blocks)."""


@dataclass(frozen=True)
class PairPartition:
    """A perfect matching of {1, ..., length} in canonical form.

    ``blocks`` is a tuple of pairs ``(r, s)`` with ``r < s``, sorted by first
    element.  The empty partition (``length == 0``) is allowed.
    """

    length: int
    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.length % 2 != 0 or self.length < 0:
            raise PartitionError(f"length must be even and >= 0, got {self.length}")
        seen = set()
        prev_first = 0
        for blk in self.blocks:
            if len(blk) != 2:
                raise PartitionError(f"malformed block {blk!r}")
            r, s = blk
            if not (1 <= r < s <= self.length):
                raise PartitionError(f"block {blk!r} out of range for length {self.length}")
            if r <= prev_first:
                raise PartitionError("blocks must be sorted by first element")
            prev_first = r
            seen.update(blk)
        if len(seen) != self.length:
            raise PartitionError("blocks do not form a perfect matching")

    @classmethod
    def from_blocks(cls, blocks) -> "PairPartition":
        """Build a canonical partition from any iterable of pairs."""
        norm = sorted(tuple(sorted(b)) for b in blocks)
        length = 2 * len(norm)
        return cls(length, tuple((int(r), int(s)) for r, s in norm))

    @property
    def k(self) -> int:
        return self.length // 2

    def partner(self, r: int) -> int:
        for a, b in self.blocks:
            if a == r:
                return b
            if b == r:
                return a
        raise PartitionError(f"element {r} not in partition of length {self.length}")

    def shift(self, offset: int) -> "PairPartition":
        """Translate every element by ``offset`` (new length grows by it)."""
        return PairPartition(
            self.length + offset,
            tuple((r + offset, s + offset) for r, s in self.blocks),
        )

    def reflect(self) -> "PairPartition":
        """Mirror the partition: element r goes to length + 1 - r."""
        L = self.length
        return PairPartition.from_blocks((L + 1 - s, L + 1 - r) for r, s in self.blocks)


def disjoint_union(p1: PairPartition, p2: PairPartition) -> PairPartition:
    """Concatenate p1 with p2 translated past it."""
    blocks = p1.blocks + tuple(
        (r + p1.length, s + p1.length) for r, s in p2.blocks
    )
    return PairPartition(p1.length + p2.length, blocks)


def nest(p: PairPartition) -> PairPartition:
    """Wrap p inside one outer block pairing the new first and last points."""
    inner = tuple((r + 1, s + 1) for r, s in p.blocks)
    return PairPartition(p.length + 2, ((1, p.length + 2),) + tuple(sorted(inner)))


def enumerate_pair_partitions(length: int) -> list[PairPartition]:
    """All (length-1)!! perfect matchings of {1, ..., length}, canonical form.

    Odd ``length`` is a domain error: an odd Gaussian moment has no pairings
    (callers treat the moment as zero).
    """
    if length % 2 != 0 or length < 0:
        raise PartitionError(f"no pair partitions of odd length {length}")
    out: list[PairPartition] = []

    def rec(free: tuple[int, ...], acc: tuple[tuple[int, int], ...]):
        if not free:
            out.append(PairPartition(length, acc))
            return
        r = free[0]
        for s in free[1:]:
            rest = tuple(x for x in free[1:] if x != s)
            rec(rest, acc + ((r, s),))

    rec(tuple(range(1, length + 1)), ())
    return out


def is_noncrossing(pi: PairPartition) -> bool:
    """False iff two blocks (r1,s1), (r2,s2) interleave as r1 < r2 < s1 < s2."""
    for i, (r1, s1) in enumerate(pi.blocks):
        for r2, s2 in pi.blocks[i + 1 :]:
            if r1 < r2 < s1 < s2:
                return False
    return True


def enumerate_noncrossing(length: int) -> list[PairPartition]:
    """All Catalan(length/2) non-crossing matchings of {1, ..., length}.

    Generated directly (first point pairs at even distance, recursing on the
    inside and outside segments) rather than by filtering; the filter
    equivalence is a test-suite property.
    """
    if length % 2 != 0 or length < 0:
        raise PartitionError(f"no pair partitions of odd length {length}")

    def rec(points: tuple[int, ...]):
        if not points:
            yield ()
            return
        r = points[0]
        for j in range(1, len(points), 2):
            s = points[j]
            inside, outside = points[1:j], points[j + 1 :]
            for bi in rec(inside):
                for bo in rec(outside):
                    yield ((r, s),) + bi + bo

    return [
        PairPartition.from_blocks(blocks)
        for blocks in rec(tuple(range(1, length + 1)))
    ]


def catalan(k: int) -> int:
    return comb(2 * k, k) // (k + 1)


def double_factorial_odd(m: int) -> int:
    """(2k-1)!! for m = 2k-1 (with (-1)!! = 1)."""
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


def find_innermost_adjacent(pi: PairPartition, prefer: str = "first") -> tuple[int, int]:
    """Some block of the form (r, r+1); every nonempty non-crossing matching
    has one.

    ``prefer`` selects the deterministic tie-break: ``"first"`` (smallest r,
    the canonical choice) or ``"last"`` (largest r, used by the
    order-independence property tests).
    """
    if pi.length == 0:
        raise PartitionError("empty partition has no blocks")
    if not is_noncrossing(pi):
        raise PartitionError("partition has a crossing")
    adjacent = [(r, s) for r, s in pi.blocks if s == r + 1]
    # A nonempty non-crossing matching always contains an adjacent block.
    if prefer == "last":
        return adjacent[-1]
    return adjacent[0]


def remove_block(pi: PairPartition, block: tuple[int, int]) -> PairPartition:
    """Delete ``block`` = (r, r+1) and relabel the remaining points 1..length-2."""
    r, s = block
    if s != r + 1 or block not in pi.blocks:
        raise PartitionError(f"{block!r} is not an adjacent block of the partition")

    def relabel(x: int) -> int:
        return x if x < r else x - 2

    return PairPartition.from_blocks(
        (relabel(a), relabel(b)) for a, b in pi.blocks if (a, b) != block
    )


def nesting_depth(pi: PairPartition) -> int:
    """Maximum number of blocks nested around (and including) a single block."""
    depth = 0
    for r, s in pi.blocks:
        d = 1 + sum(1 for r2, s2 in pi.blocks if r2 < r and s < s2)
        depth = max(depth, d)
    return depth


def nesting_forest(pi: PairPartition) -> list:
    """The containment forest of a non-crossing matching.

    Returns a list of top-level nodes; each node is a pair
    ``(block, children)`` with ``children`` again such a list, ordered left
    to right.
    """
    if not is_noncrossing(pi):
        raise PartitionError("partition has a crossing")

    def build(blocks):
        roots = []
        i = 0
        while i < len(blocks):
            r, s = blocks[i]
            inner = [b for b in blocks[i + 1 :] if b[0] < s]
            roots.append(((r, s), build(inner)))
            i += 1 + len(inner)
        return roots

    return build(list(pi.blocks))
