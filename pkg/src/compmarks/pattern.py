"""Marked point patterns, random generators and simulation scenarios.

Randomness always comes from an explicit :class:`numpy.random.Generator`.
:func:`stream` derives independent generators from a seed and an integer
key path, so a task keyed by ``(pattern, point)`` draws the same numbers
whichever worker runs it and in whatever order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coda import CLOSURE_RTOL, Composition, closure
from .errors import (
    BadIndexError,
    ConfigError,
    DataError,
    DegeneratePatternError,
    DimensionMismatchError,
    OutsideWindowError,
    ZeroPartError,
)

__all__ = [
    "stream",
    "Window",
    "MarkedPattern",
    "DiscRegion",
    "ScenarioSpec",
    "scenario_preset",
    "sample_poisson",
    "sample_dirichlet",
    "build_scenario",
    "random_permutations",
    "permute_marks",
]

# top-level stream keys
GROUND, MARKS, GLOBAL_PERM, LOCAL_PERM = 0, 1, 2, 3


def stream(seed, *key):
    """Independent generator for ``seed`` and a path of nonnegative ints."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Window:
    """Axis-aligned rectangular observation window."""

    x_range: tuple = (0.0, 1.0)
    y_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        x0, x1 = map(float, self.x_range)
        y0, y1 = map(float, self.y_range)
        if not (x1 > x0 and y1 > y0):
            raise DataError(f"window must have positive side lengths: {self}")
        object.__setattr__(self, "x_range", (x0, x1))
        object.__setattr__(self, "y_range", (y0, y1))

    @property
    def width(self):
        return self.x_range[1] - self.x_range[0]

    @property
    def height(self):
        return self.y_range[1] - self.y_range[0]

    @property
    def area(self):
        return self.width * self.height

    @property
    def diameter(self):
        return float(np.hypot(self.width, self.height))

    def contains(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return (
            (xy[:, 0] >= self.x_range[0]) & (xy[:, 0] <= self.x_range[1])
            & (xy[:, 1] >= self.y_range[0]) & (xy[:, 1] <= self.y_range[1])
        )

    @classmethod
    def bounding_box(cls, xy, margin=0.0):
        xy = np.asarray(xy, dtype=float)
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        return cls((lo[0] - margin, hi[0] + margin), (lo[1] - margin, hi[1] + margin))


@dataclass(frozen=True, eq=False)
class MarkedPattern:
    """Point locations in a window, each carrying a composition mark.

    Attributes
    ----------
    locations : ndarray, shape (n, 2)
    marks : ndarray, shape (n, D)
        Closed compositions, every row summing to ``total``.
    window : Window
    total : float
        Common sum constant of the marks.
    ids : tuple or None
        Optional point identifiers carried through to outputs.
    """

    locations: np.ndarray
    marks: np.ndarray
    window: Window = field(default_factory=Window)
    total: float = 1.0
    ids: tuple | None = None

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float).reshape(-1, 2)
        marks = np.array(self.marks, dtype=float)
        if marks.ndim != 2 or marks.shape[0] != loc.shape[0]:
            raise DimensionMismatchError("need one mark row per location")
        if marks.shape[1] < 2:
            raise DimensionMismatchError("marks need at least two parts")
        if np.any(marks <= 0):
            raise ZeroPartError("marks must have strictly positive parts")
        sums = marks.sum(axis=1)
        if np.any(np.abs(sums - self.total) > CLOSURE_RTOL * self.total):
            raise DataError("marks do not share the sum constant")
        outside = np.flatnonzero(~self.window.contains(loc)) if len(loc) else []
        if len(outside):
            raise OutsideWindowError(f"{len(outside)} points outside the window", outside)
        if self.ids is not None and len(self.ids) != loc.shape[0]:
            raise DimensionMismatchError("need one id per location")
        loc.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "marks", marks)

    @property
    def n(self):
        return self.locations.shape[0]

    @property
    def D(self):
        return self.marks.shape[1]

    @property
    def intensity(self):
        """Empirical intensity ``n / |W|``."""
        return self.n / self.window.area

    def composition(self, i):
        if not -self.n <= i < self.n:
            raise BadIndexError(f"point {i} out of range for n={self.n}")
        return Composition(tuple(self.marks[i].tolist()), self.total)

    def with_marks(self, marks):
        return MarkedPattern(self.locations, marks, self.window, self.total, self.ids)

    def require_pairs(self):
        if self.n < 2:
            raise DegeneratePatternError(f"need at least two points, have {self.n}")

    def __eq__(self, other):
        return (
            isinstance(other, MarkedPattern)
            and self.window == other.window
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.marks, other.marks)
        )


@dataclass(frozen=True)
class DiscRegion:
    """A disc inside which marks follow their own Dirichlet law.

    ``target`` names the mark component the region manipulates; when left
    as ``None`` it is inferred as the part whose concentration grows most
    relative to the background.
    """

    center: tuple
    radius: float
    alpha: tuple
    target: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.center) != 2:
            raise ConfigError("disc center must be (x, y)")
        if not self.radius > 0:
            raise ConfigError("disc radius must be positive")
        if any(not a > 0 for a in self.alpha):
            raise ConfigError("Dirichlet parameters must be positive")

    def contains(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        d2 = (xy[:, 0] - self.center[0]) ** 2 + (xy[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius ** 2

    def target_component(self, background_alpha):
        if self.target is not None:
            return self.target
        bg = np.asarray(background_alpha, dtype=float)
        return int(np.argmax(np.asarray(self.alpha) / bg))


@dataclass(frozen=True)
class ScenarioSpec:
    intensity: float = 500.0
    window: Window = field(default_factory=Window)
    background_alpha: tuple = (5.0, 5.0, 5.0)
    regions: tuple = ()
    scenario_id: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "background_alpha", tuple(float(a) for a in self.background_alpha))
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.intensity > 0:
            raise ConfigError("intensity must be positive")
        D = len(self.background_alpha)
        if D < 2:
            raise ConfigError("compositions need at least two parts")
        if any(not a > 0 for a in self.background_alpha):
            raise ConfigError("Dirichlet parameters must be positive")
        for r in self.regions:
            if len(r.alpha) != D:
                raise DimensionMismatchError(
                    f"region alpha {r.alpha} has {len(r.alpha)} parts, background has {D}"
                )

    @property
    def D(self):
        return len(self.background_alpha)


DEFAULT_CENTERS = ((0.25, 0.25), (0.75, 0.75))


def scenario_preset(name, intensity=500.0, centers=DEFAULT_CENTERS, radius=0.075):
    """Scenario I (null), II (two V1 discs) or III (V1 disc and V3 disc)."""
    name = str(name).upper()
    bg = (5.0, 5.0, 5.0)
    if name == "I":
        regions = ()
    elif name == "II":
        regions = tuple(DiscRegion(c, radius, (20.0, 5.0, 5.0)) for c in centers)
    elif name == "III":
        regions = (
            DiscRegion(centers[0], radius, (20.0, 5.0, 5.0)),
            DiscRegion(centers[1], radius, (5.0, 5.0, 20.0)),
        )
    else:
        raise ConfigError(f"unknown scenario {name!r}; expected I, II or III")
    return ScenarioSpec(intensity, Window(), bg, regions, name)


def sample_poisson(intensity, window, rng):
    """Homogeneous Poisson process: Poisson count, then uniform locations."""
    if not intensity > 0:
        raise ConfigError("intensity must be positive")
    count = rng.poisson(intensity * window.area)
    u = rng.random((count, 2))
    x = window.x_range[0] + u[:, 0] * window.width
    y = window.y_range[0] + u[:, 1] * window.height
    return np.column_stack([x, y])


def sample_dirichlet(alpha, rng, size=None):
    """Dirichlet draws by normalising independent Gamma(alpha_j, 1) variates.

    ``alpha`` may be a single vector or an ``(n, D)`` matrix of per-point
    parameters. With ``size=None`` and a vector ``alpha`` a single
    :class:`Composition` is returned; otherwise an ndarray of closed rows.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ConfigError("Dirichlet parameters must be positive")
    shape = alpha.shape if size is None else (size,) + alpha.shape
    g = rng.standard_gamma(np.broadcast_to(alpha, shape))
    # underflow guard for tiny alphas
    g = np.maximum(g, np.finfo(float).tiny)
    out = g / g.sum(axis=-1, keepdims=True)
    if size is None and alpha.ndim == 1:
        return Composition(tuple(out.tolist()))
    return out


def region_labels(spec, locations):
    """Index of the first region containing each point, ``-1`` for background."""
    labels = np.full(len(locations), -1, dtype=int)
    for idx, region in enumerate(spec.regions):
        free = labels < 0
        labels[free & region.contains(locations)] = idx
    return labels


def build_scenario(spec, locations, rng):
    """Attach scenario marks to fixed locations.

    Returns
    -------
    pattern : MarkedPattern
    region : ndarray of int
        Ground truth per point: index of the disc it lies in (first match
        in list order), or ``-1`` for background points.
    """
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    labels = region_labels(spec, locations)
    alphas = np.array([spec.background_alpha] + [r.alpha for r in spec.regions])
    marks = sample_dirichlet(alphas[labels + 1], rng, size=None) if len(labels) else np.empty((0, spec.D))
    return MarkedPattern(locations, closure(marks), spec.window), labels


def random_permutations(rng, s, n, fixed=None):
    """``s`` uniform permutations of ``range(n)``, one per row.

    Each row is the argsort of fresh uniform keys, so a row consumes exactly
    ``n`` draws. With ``fixed=i`` position ``i`` always keeps label ``i``
    and the remaining labels are shuffled among the other positions.
    """
    if fixed is None:
        return np.argsort(rng.random((s, n)), axis=1, kind="stable")
    others = np.delete(np.arange(n), fixed)
    perms = np.empty((s, n), dtype=np.intp)
    perms[:, fixed] = fixed
    perms[:, others] = others[np.argsort(rng.random((s, n - 1)), axis=1, kind="stable")]
    return perms


def permute_marks(pattern, rng):
    """Random labelling: shuffle marks over the fixed locations."""
    pattern.require_pairs()
    perm = random_permutations(rng, 1, pattern.n)[0]
    return pattern.with_marks(pattern.marks[perm])
