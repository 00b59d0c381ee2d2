"""Binary indexing of received-layer subsets.

Layer ``i`` (1-based) is bit ``i-1``, so with two layers ``{1}`` is ``01``,
``{2}`` is ``10`` and ``{1, 2}`` is ``11``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True, order=True)
class SubsetId:
    bitmask: int
    num_layers: int

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 1 <= self.bitmask < 2 ** self.num_layers:
            raise ValueError(f"bitmask {self.bitmask} outside [1, {2 ** self.num_layers - 1}]")

    @property
    def members(self) -> frozenset[int]:
        return subset_members(self)

    @property
    def size(self) -> int:
        return bin(self.bitmask).count("1")

    def binary(self) -> str:
        return format(self.bitmask, f"0{self.num_layers}b")

    def __str__(self) -> str:
        return self.binary()


def subset_index(layers: Iterable[int], num_layers: int) -> SubsetId:
    layers = set(int(i) for i in layers)
    if not layers:
        raise ValueError("the empty subset has no decoder")
    bad = [i for i in layers if not 1 <= i <= num_layers]
    if bad:
        raise ValueError(f"layers {sorted(bad)} outside [1, {num_layers}]")
    return SubsetId(sum(1 << (i - 1) for i in layers), num_layers)


def subset_members(subset: SubsetId) -> frozenset[int]:
    return frozenset(i + 1 for i in range(subset.num_layers) if subset.bitmask >> i & 1)


def all_subsets(num_layers: int) -> list[SubsetId]:
    return [SubsetId(b, num_layers) for b in range(1, 2 ** num_layers)]


def prefix(count: int, num_layers: int) -> SubsetId:
    """The successive-refinement subset ``{1, ..., count}``."""
    if not 1 <= count <= num_layers:
        raise ValueError(f"prefix length {count} outside [1, {num_layers}]")
    return SubsetId(2 ** count - 1, num_layers)


def parse_subset(spec: str | int | Sequence[int] | SubsetId, num_layers: int) -> SubsetId:
    """Parse ``"101"`` (binary, layer 1 rightmost) or ``[1, 3]`` (layer list)."""
    if isinstance(spec, SubsetId):
        return spec
    if isinstance(spec, int):
        return SubsetId(spec, num_layers)
    if isinstance(spec, str):
        s = spec.strip()
        if s.startswith("[") or "," in s:
            items = [t for t in s.strip("[]").replace(" ", "").split(",") if t]
            return subset_index([int(t) for t in items], num_layers)
        if s and set(s) <= {"0", "1"}:
            if len(s) > num_layers:
                raise ValueError(f"subset {s!r} has more than {num_layers} bits")
            return SubsetId(int(s, 2), num_layers)
        raise ValueError(f"cannot parse subset {spec!r}")
    return subset_index(spec, num_layers)
