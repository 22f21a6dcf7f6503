"""Semi-algebraic region masks over zeroth-coordinate points.

Filtrations, open covers and plane-field domains on the sampled inverse
limit are all realized as predicates on x_0. Regions support erosion so a
cover can be shrunk by its margin before mollification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Region:
    def contains(self, pts):
        raise NotImplementedError

    def erode(self, e):
        raise NotImplementedError


@dataclass(frozen=True)
class Whole(Region):
    def contains(self, pts):
        pts = np.asarray(pts)
        return np.ones(pts.shape[:-1], dtype=bool)

    def erode(self, e):
        return self


@dataclass(frozen=True)
class Below(Region):
    """{x : x[axis] <= threshold}"""

    axis: int
    threshold: float

    def contains(self, pts):
        return np.asarray(pts)[..., self.axis] <= self.threshold

    def erode(self, e):
        return Below(self.axis, self.threshold - e)


@dataclass(frozen=True)
class Above(Region):
    """{x : x[axis] >= threshold}"""

    axis: int
    threshold: float

    def contains(self, pts):
        return np.asarray(pts)[..., self.axis] >= self.threshold

    def erode(self, e):
        return Above(self.axis, self.threshold + e)


@dataclass(frozen=True)
class Ball(Region):
    """Max-metric ball around a point."""

    center: tuple
    radius: float

    def contains(self, pts):
        diff = np.abs(np.asarray(pts) - np.asarray(self.center))
        return diff.max(axis=-1) <= self.radius

    def erode(self, e):
        return Ball(self.center, self.radius - e)


@dataclass(frozen=True)
class AllOf(Region):
    parts: tuple

    def contains(self, pts):
        out = self.parts[0].contains(pts)
        for p in self.parts[1:]:
            out = out & p.contains(pts)
        return out

    def erode(self, e):
        return AllOf(tuple(p.erode(e) for p in self.parts))


@dataclass(frozen=True)
class AnyOf(Region):
    parts: tuple

    def contains(self, pts):
        out = self.parts[0].contains(pts)
        for p in self.parts[1:]:
            out = out | p.contains(pts)
        return out

    def erode(self, e):
        return AnyOf(tuple(p.erode(e) for p in self.parts))


def all_of(*parts):
    return AllOf(tuple(parts))


def any_of(*parts):
    return AnyOf(tuple(parts))


def describe(region):
    """Stable textual form, used in serialized reports."""
    if isinstance(region, Whole):
        return "whole"
    if isinstance(region, Below):
        return f"x[{region.axis}] <= {region.threshold:.6g}"
    if isinstance(region, Above):
        return f"x[{region.axis}] >= {region.threshold:.6g}"
    if isinstance(region, Ball):
        c = ",".join(f"{v:.6g}" for v in region.center)
        return f"|x - ({c})| <= {region.radius:.6g}"
    if isinstance(region, AllOf):
        return "(" + " and ".join(describe(p) for p in region.parts) + ")"
    if isinstance(region, AnyOf):
        return "(" + " or ".join(describe(p) for p in region.parts) + ")"
    return repr(region)
