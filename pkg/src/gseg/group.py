"""Point-stabilizer algebra of the wallpaper groups p4 and p4m.

An element ``(m, r)`` denotes the planar map ``F**m R**r``: ``R`` is a
counter-clockwise quarter turn ``(x, y) -> (-y, x)`` and ``F`` the
horizontal flip ``(x, y) -> (-x, y)``.  Composition ``a * b`` applies ``b``
first.  Translations are not represented here; convolution supplies them.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np


class GroupSpec(enum.Enum):
    P1 = 1
    P4 = 4
    P4M = 8

    @property
    def order(self) -> int:
        return self.value

    @classmethod
    def parse(cls, name: str | GroupSpec) -> GroupSpec:
        if isinstance(name, GroupSpec):
            return name
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown group {name!r}; expected p1, p4 or p4m") from None


class StabilizerElement(NamedTuple):
    mirror: int
    quarter_turns: int

    def __mul__(self, other):
        return compose(self, other)

    def inverse(self) -> StabilizerElement:
        return inverse(self)

    def matrix(self) -> np.ndarray:
        """2x2 integer matrix acting on column vectors ``(x, y)``."""
        rot = np.array([[0, -1], [1, 0]])
        flip = np.array([[-1, 0], [0, 1]])
        return np.linalg.matrix_power(flip, self.mirror) @ np.linalg.matrix_power(rot, self.quarter_turns)


IDENTITY = StabilizerElement(0, 0)


@lru_cache(maxsize=None)
def enumerate_group(group: GroupSpec) -> tuple[StabilizerElement, ...]:
    """Elements in canonical order: rotations ascending, then their mirrored copies."""
    group = GroupSpec.parse(group)
    mirrors = (0, 1) if group is GroupSpec.P4M else (0,)
    turns = range(1) if group is GroupSpec.P1 else range(4)
    return tuple(StabilizerElement(m, r) for m in mirrors for r in turns)


def compose(a: StabilizerElement, b: StabilizerElement) -> StabilizerElement:
    sign = -1 if b.mirror else 1
    return StabilizerElement(a.mirror ^ b.mirror, (sign * a.quarter_turns + b.quarter_turns) % 4)


def inverse(g: StabilizerElement) -> StabilizerElement:
    if g.mirror:
        return g
    return StabilizerElement(0, (-g.quarter_turns) % 4)


def index_of(group: GroupSpec, g: StabilizerElement) -> int:
    try:
        return enumerate_group(group).index(g)
    except ValueError:
        raise ValueError(f"{g} is not an element of {group.name}") from None


def act_on_offset(g: StabilizerElement, offset: tuple[int, int], size: int) -> tuple[int, int]:
    """Image of grid cell ``offset = (row, col)`` under ``g`` about the centre of a ``size`` grid."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"kernel size must be odd, got {size}")
    row, col = offset
    if not (0 <= row < size and 0 <= col < size):
        raise ValueError(f"offset {offset} outside {size}x{size} grid")
    c = (size - 1) // 2
    x, y = col - c, c - row
    for _ in range(g.quarter_turns):
        x, y = -y, x
    if g.mirror:
        x = -x
    return c - y, x + c


@lru_cache(maxsize=None)
def cayley_table(group: GroupSpec) -> np.ndarray:
    elems = enumerate_group(group)
    table = np.empty((len(elems), len(elems)), dtype=np.int64)
    for i, a in enumerate(elems):
        for j, b in enumerate(elems):
            table[i, j] = elems.index(compose(a, b))
    table.flags.writeable = False
    return table


@lru_cache(maxsize=None)
def inverse_indices(group: GroupSpec) -> np.ndarray:
    elems = enumerate_group(group)
    out = np.array([elems.index(inverse(g)) for g in elems])
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def kernel_permutation(g: StabilizerElement, size: int) -> np.ndarray:
    """Flat source index for every cell of a kernel transformed by ``g``.

    ``transformed.ravel() == kernel.ravel()[perm]`` realizes
    ``transformed(q) = kernel(g^-1 q)``.
    """
    g_inv = inverse(g)
    perm = np.empty(size * size, dtype=np.int64)
    for row in range(size):
        for col in range(size):
            src = act_on_offset(g_inv, (row, col), size)
            perm[row * size + col] = src[0] * size + src[1]
    perm.flags.writeable = False
    return perm
