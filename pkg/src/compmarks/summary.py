r"""Second-order mark summary characteristics for log-ratio transformed marks.

Three test functions are supported, each on component ``j`` at the first
point and component ``l`` at the second:

=====  ====================  =====================================
kind   global form           local form (anchored at point ``i``)
=====  ====================  =====================================
t1     ``a * b``             ``a_i * b_k``
t2     ``0.5 * (a - b)**2``  ``0.5 * (a_i - b_k)**2``
t3     ``(a - mu_j)(b - mu_l)``  ``a_i * (b_k - mu_l)``
=====  ====================  =====================================

t1 gives the conditional mean product (mark correlation), t2 the mark
variogram and t3 Shimatani's I.

Curves are kernel-weighted means over point pairs,

.. math::

    \hat\nabla(r) = \frac{\sum_{i \ne k} t(a_i, b_k)\,K(d_{ik} - r)}
                         {\sum_{i \ne k} K(d_{ik} - r)},

where the local version restricts the sums to pairs anchored at ``i``.
The constant ``1 / (2 pi r |W|)`` of the product-density estimators
cancels in the ratio; :meth:`SummaryCurve.density_numerator` restores it.

All pair bookkeeping lives in :class:`PairKernel`, a sparse
``(pairs, grid)`` matrix of kernel weights built once per pattern and
shared read-only between the observed curve and every permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .coda import Transform
from .errors import (
    BadIndexError,
    ConfigError,
    DegeneratePatternError,
    EmptyGridError,
)

__all__ = [
    "KINDS",
    "StatisticSpec",
    "RGrid",
    "KernelSpec",
    "MarkMoments",
    "SummaryCurve",
    "PairKernel",
    "transform_marks",
    "test_function",
    "kernel_value",
    "compute_moments",
    "estimate_global",
    "estimate_local",
    "normalize",
    "table_factor",
]

KINDS = {
    "t1": "t1", "t1_markcorr": "t1", "markcorr": "t1", "tau": "t1",
    "t2": "t2", "t2_variogram": "t2", "variogram": "t2", "gamma": "t2",
    "t3": "t3", "t3_shimatani": "t3", "shimatani": "t3", "iota": "t3",
}
KIND_NAMES = {"t1": "markcorr", "t2": "variogram", "t3": "shimatani"}

ZERO_TOL = 1e-12
VARIANCE_CONVENTION = "sample variance, divisor n-1"


def _kind(kind):
    try:
        return KINDS[str(kind).lower()]
    except KeyError:
        raise ConfigError(f"unknown statistic {kind!r}; expected one of t1, t2, t3") from None


@dataclass(frozen=True)
class StatisticSpec:
    """Which characteristic to compute.

    ``j`` and ``l`` index the transformed coordinates (zero-based); ``l``
    defaults to ``j``. ``point`` is ``None`` for the global statistic and
    the anchor index for a local one.
    """

    kind: str = "t1"
    transform: Transform = field(default_factory=Transform)
    j: int = 0
    l: int | None = None
    point: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))
        if isinstance(self.transform, str):
            object.__setattr__(self, "transform", Transform.parse(self.transform))
        if self.l is None:
            object.__setattr__(self, "l", self.j)
        if self.j < 0 or self.l < 0:
            raise BadIndexError("component indices must be nonnegative")

    @property
    def scope(self):
        return "global" if self.point is None else "local"

    def at(self, i):
        return replace(self, point=int(i))

    def as_global(self):
        return replace(self, point=None)

    def check_dimension(self, dim):
        if self.j >= dim or self.l >= dim:
            raise BadIndexError(
                f"components ({self.j}, {self.l}) out of range for dimension {dim}"
            )

    def label(self, D=None):
        """Stable one-based label, e.g. ``t1_clr_1_1``."""
        return f"{self.kind}_{self.transform.label(D)}_{self.j + 1}_{self.l + 1}"


@dataclass(frozen=True, eq=False)
class RGrid:
    """Strictly increasing positive evaluation distances."""

    distances: np.ndarray

    def __post_init__(self):
        r = np.array(self.distances, dtype=float).ravel()
        if r.size < 2:
            raise EmptyGridError("distance grid needs at least two points")
        if r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise EmptyGridError("distances must be positive and strictly increasing")
        r.setflags(write=False)
        object.__setattr__(self, "distances", r)

    @classmethod
    def regular(cls, r_max=0.25, size=128):
        """``size`` equally spaced points on ``(0, r_max]``."""
        if not r_max > 0:
            raise EmptyGridError("r_max must be positive")
        return cls(np.linspace(r_max / size, r_max, size))

    @classmethod
    def default(cls, window, size=128):
        """Quarter of the shorter window side, i.e. 0.25 on the unit square."""
        return cls.regular(0.25 * min(window.width, window.height), size)

    @property
    def r_max(self):
        return float(self.distances[-1])

    def __len__(self):
        return self.distances.size

    def __eq__(self, other):
        return isinstance(other, RGrid) and np.array_equal(self.distances, other.distances)


@dataclass(frozen=True)
class KernelSpec:
    """Smoothing kernel and bandwidth.

    With ``bandwidth=None`` Stoyan's rule ``h = stoyan / sqrt(intensity)``
    sets the half-width from the empirical intensity. For the Gaussian
    kernel ``h`` is the standard deviation.
    """

    family: str = "epanechnikov"
    bandwidth: float | None = None
    stoyan: float = 0.15

    def __post_init__(self):
        if self.family not in ("epanechnikov", "box", "gaussian"):
            raise ConfigError(f"unknown kernel {self.family!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if not self.stoyan > 0:
            raise ConfigError("Stoyan coefficient must be positive")

    @classmethod
    def parse(cls, family="epanechnikov", bandwidth=None):
        if bandwidth is None:
            return cls(family)
        text = str(bandwidth)
        try:
            if text.startswith("stoyan"):
                _, _, c = text.partition(":")
                return cls(family, None, float(c) if c else 0.15)
            return cls(family, float(text))
        except ValueError:
            raise ConfigError(f"bandwidth must be a number or stoyan:C, got {text!r}") from None

    def resolve(self, intensity):
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return self.stoyan / np.sqrt(intensity)

    def describe(self):
        bw = f"stoyan:{self.stoyan}" if self.bandwidth is None else repr(self.bandwidth)
        return {"family": self.family, "bandwidth": bw}


def kernel_value(u, family="epanechnikov", h=0.1):
    """Kernel density at offset ``u``; compact kernels vanish for ``|u| >= h``."""
    if isinstance(family, KernelSpec):
        if family.bandwidth is None:
            raise ConfigError("kernel_value needs an explicit bandwidth")
        family, h = family.family, family.bandwidth
    u = np.asarray(u, dtype=float)
    if family == "epanechnikov":
        z = u / h
        return np.where(np.abs(z) < 1, 0.75 / h * (1 - z * z), 0.0)
    if family == "box":
        return np.where(np.abs(u) < h, 0.5 / h, 0.0)
    if family == "gaussian":
        return np.exp(-0.5 * (u / h) ** 2) / (h * np.sqrt(2 * np.pi))
    raise ConfigError(f"unknown kernel {family!r}")


def test_function(kind, a, b, mu_j=0.0, mu_l=0.0, local=False):
    """Evaluate a test function elementwise.

    For t3 the global form centres both arguments while the local form
    centres only the neighbour mark; the means are ignored by t1 and t2.
    """
    kind = _kind(kind)
    if kind == "t1":
        return a * b
    if kind == "t2":
        diff = a - b
        return 0.5 * diff * diff
    if local:
        return a * (b - mu_l)
    return (a - mu_j) * (b - mu_l)


test_function.__test__ = False  # keep pytest from collecting the name


@dataclass(frozen=True, eq=False)
class MarkMoments:
    """Column means and covariance (divisor ``n - 1``) of transformed marks."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def variance(self):
        return np.diag(self.cov).copy()


def compute_moments(Y):
    """Moments of an ``(n, dim)`` matrix of transformed marks."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 2:
        raise DegeneratePatternError("moments need at least two marks")
    mean = Y.mean(axis=0)
    centred = Y - mean
    cov = centred.T @ centred / (Y.shape[0] - 1)
    # exact symmetry for the invariant checks
    cov = 0.5 * (cov + cov.T)
    return MarkMoments(mean, cov, Y.shape[0])


def transform_marks(pattern, transform="clr"):
    """``(n, dim)`` matrix whose row ``i`` is the transformed mark of point ``i``."""
    if isinstance(transform, str):
        transform = Transform.parse(transform)
    return transform.apply(pattern.marks)


class PairKernel:
    """Kernel weights for every ordered pair that reaches the grid.

    Pairs ``(i, k)``, ``i != k``, are stored sorted by ``i`` then ``k``,
    with ``offsets[i]:offsets[i + 1]`` delimiting those anchored at ``i``.
    For the compact kernels only pairs closer than ``r_max + h`` are kept;
    every dropped pair has weight exactly zero at every grid distance, so
    sums are unchanged. ``weights`` is a CSR matrix of shape
    ``(n_pairs, T)`` holding ``e_ik * K(d_ik - r_t)``, where ``e_ik`` is 1
    or the translation edge-correction factor.

    Parameters
    ----------
    locations : array_like, shape (n, 2)
    grid : RGrid
    h : float
        Resolved bandwidth.
    family : str
    window : Window, optional
        Needed for ``edge_correction="translation"``.
    truncate : bool
        Drop pairs beyond the kernel's reach (compact kernels only).
    """

    def __init__(self, locations, grid, h, family="epanechnikov", window=None,
                 edge_correction="none", truncate=True):
        xy = np.asarray(locations, dtype=float).reshape(-1, 2)
        self.n = n = xy.shape[0]
        self.grid = grid
        self.h = float(h)
        self.family = family
        self.edge_correction = edge_correction
        r = grid.distances
        if truncate and family != "gaussian" and n > 1:
            reach = grid.r_max + self.h
            half = cKDTree(xy).query_pairs(reach, output_type="ndarray")
            i_idx = np.concatenate([half[:, 0], half[:, 1]])
            k_idx = np.concatenate([half[:, 1], half[:, 0]])
            order = np.lexsort((k_idx, i_idx))
            i_idx, k_idx = i_idx[order], k_idx[order]
        else:
            i_idx, k_idx = np.nonzero(~np.eye(n, dtype=bool))
        self.i = i_idx.astype(np.intp)
        self.k = k_idx.astype(np.intp)
        delta = xy[self.k] - xy[self.i]
        self.dist = np.hypot(delta[:, 0], delta[:, 1])
        if edge_correction == "translation":
            if window is None:
                raise ConfigError("translation edge correction needs the window")
            overlap = (window.width - np.abs(delta[:, 0])) * (window.height - np.abs(delta[:, 1]))
            edge = window.area / np.maximum(overlap, np.finfo(float).tiny)
        elif edge_correction in ("none", None):
            edge = None
        else:
            raise ConfigError(f"unknown edge correction {edge_correction!r}")
        self.offsets = np.searchsorted(self.i, np.arange(n + 1))
        self.weights = self._weights(r, edge)
        self.weights_t = self.weights.T.tocsr()
        anchor = sparse.csr_matrix(
            (np.ones(self.i.size), (self.i, np.arange(self.i.size))), shape=(n, self.i.size)
        )
        self.local_den = (anchor @ self.weights).toarray()
        self.global_den = self.local_den.sum(axis=0)

    def _weights(self, r, edge, chunk=200_000):
        blocks = []
        for start in range(0, max(self.dist.size, 1), chunk):
            d = self.dist[start:start + chunk]
            w = kernel_value(d[:, None] - r[None, :], self.family, self.h)
            if edge is not None:
                w = w * edge[start:start + chunk, None]
            blocks.append(sparse.csr_matrix(w))
        return sparse.vstack(blocks, format="csr") if len(blocks) > 1 else blocks[0]

    def neighbours(self, i):
        return self.k[self.offsets[i]:self.offsets[i + 1]]

    def global_sums(self, pair_values):
        """Kernel-weighted sums over all pairs; ``pair_values`` is (P,) or (P, S)."""
        return self.weights_t @ pair_values

    def local_sums(self, i, neighbour_values):
        """Kernel-weighted sums over pairs anchored at ``i``."""
        block = self.weights[self.offsets[i]:self.offsets[i + 1]]
        return block.T @ neighbour_values


@dataclass(frozen=True, eq=False)
class SummaryCurve:
    """An estimated characteristic on a distance grid.

    ``numerator`` and ``denominator`` are the raw kernel sums, ``values``
    their ratio (NaN where the denominator vanishes). ``factor`` is the
    independence value the normalised track divides by; it is 0 for local
    Shimatani's I, which has no normalised form.
    """

    spec: StatisticSpec
    grid: RGrid
    numerator: np.ndarray
    denominator: np.ndarray
    values: np.ndarray
    area: float
    factor: float | None = None
    normalized: np.ndarray | None = None
    zero_normalizer: bool = False
    variance_convention: str = VARIANCE_CONVENTION

    @property
    def missing(self):
        return ~(self.denominator > 0)

    def density_numerator(self):
        """Kernel estimate of the t-weighted product density at each r."""
        return self.numerator / (2 * np.pi * self.grid.distances * self.area)

    def density_denominator(self):
        return self.denominator / (2 * np.pi * self.grid.distances * self.area)


def _ratio(num, den):
    den = np.asarray(den)
    if np.ndim(num) > den.ndim:
        den = den[:, None]
    den = np.broadcast_to(den, np.shape(num))
    out = np.full(np.shape(num), np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _setup(pattern, spec, grid, kernel, edge_correction, pair_kernel):
    pattern.require_pairs()
    Y = transform_marks(pattern, spec.transform)
    spec.check_dimension(Y.shape[1])
    if grid is None:
        grid = RGrid.default(pattern.window)
    if grid.r_max >= pattern.window.diameter:
        raise EmptyGridError("r_max must stay below the window diameter")
    if pair_kernel is None:
        kernel = kernel or KernelSpec()
        pair_kernel = PairKernel(
            pattern.locations, grid, kernel.resolve(pattern.intensity), kernel.family,
            pattern.window, edge_correction,
        )
    return Y, grid, pair_kernel


def global_batch(pk, Y, perms, spec, mu, chunk_elems=4_000_000):
    """Global numerators for each permutation row of ``perms``.

    Location ``x`` receives the mark of label ``perms[p, x]``. Returns the
    ``(T, S)`` numerator sums; the denominator is ``pk.global_den``.
    """
    perms = np.atleast_2d(perms)
    S = perms.shape[0]
    out = np.empty((len(pk.grid), S))
    step = max(1, chunk_elems // max(pk.i.size, 1))
    for s0 in range(0, S, step):
        p = perms[s0:s0 + step].T
        a = Y[p[pk.i], spec.j]
        b = Y[p[pk.k], spec.l]
        vals = test_function(spec.kind, a, b, mu[spec.j], mu[spec.l])
        out[:, s0:s0 + step] = pk.global_sums(vals)
    return out


def local_batch(pk, Y, perms, spec, i, mu):
    """Local numerators at anchor ``i`` for each permutation row.

    Returns the ``(T, S)`` numerator sums; the denominator is
    ``pk.local_den[i]``.
    """
    perms = np.atleast_2d(perms)
    ks = pk.neighbours(i)
    a = Y[perms[:, i], spec.j]
    b = Y[perms[:, ks].T, spec.l]
    vals = test_function(spec.kind, a[None, :], b, mu[spec.j], mu[spec.l], True)
    return pk.local_sums(i, vals)


def local_factor_batch(Y, perms, spec, i):
    """Sample-mean independence factor of point ``i`` for each permutation."""
    perms = np.atleast_2d(perms)
    n = Y.shape[0]
    a = Y[perms[:, i], spec.j]
    b_self = Y[perms[:, i], spec.l]
    col = Y[:, spec.l]
    if spec.kind == "t1":
        return a * (col.sum() - b_self) / (n - 1)
    if spec.kind == "t2":
        full = 0.5 * (n * a * a - 2 * a * col.sum() + (col * col).sum())
        return (full - 0.5 * (a - b_self) ** 2) / (n - 1)
    return np.zeros(perms.shape[0])


def _identity(n):
    return np.arange(n)[None, :]


def estimate_global(pattern, spec, grid=None, kernel=None, edge_correction="none",
                    pair_kernel=None):
    """Global characteristic of ``pattern`` on ``grid``.

    Returns a :class:`SummaryCurve` with its normalisation attached.
    """
    spec = spec.as_global()
    Y, grid, pk = _setup(pattern, spec, grid, kernel, edge_correction, pair_kernel)
    moments = compute_moments(Y)
    num = global_batch(pk, Y, _identity(pattern.n), spec, moments.mean)[:, 0]
    den = pk.global_den
    curve = SummaryCurve(spec, grid, num, den, _ratio(num, den), pattern.window.area)
    return normalize(curve, Y, moments)


def estimate_local(pattern, spec, grid=None, kernel=None, edge_correction="none",
                   pair_kernel=None):
    """Local characteristic anchored at ``spec.point``."""
    if spec.point is None:
        raise BadIndexError("local estimation needs spec.point")
    if not 0 <= spec.point < pattern.n:
        raise BadIndexError(f"point {spec.point} out of range for n={pattern.n}")
    Y, grid, pk = _setup(pattern, spec, grid, kernel, edge_correction, pair_kernel)
    moments = compute_moments(Y)
    i = spec.point
    num = local_batch(pk, Y, _identity(pattern.n), spec, i, moments.mean)[:, 0]
    den = pk.local_den[i]
    curve = SummaryCurve(spec, grid, num, den, _ratio(num, den), pattern.window.area)
    return normalize(curve, Y, moments)


def independence_factor(spec, Y, moments):
    """Sample estimate of the characteristic's value under independent marks.

    Local t1/t2 use the mean of the test function over all other points;
    global t1/t2 the mean over all ordered pairs; global t3 the sample
    covariance of components ``j`` and ``l``; local t3 the centring
    constant 0.
    """
    n = Y.shape[0]
    a, b = Y[:, spec.j], Y[:, spec.l]
    if spec.kind == "t3":
        return 0.0 if spec.scope == "local" else float(moments.cov[spec.j, spec.l])
    if spec.scope == "local":
        i = spec.point
        others = np.delete(b, i)
        return float(np.mean(test_function(spec.kind, a[i], others)))
    if spec.kind == "t1":
        total = a.sum() * b.sum() - (a * b).sum()
    else:
        total = 0.5 * (n * (a * a).sum() - 2 * a.sum() * b.sum() + n * (b * b).sum())
        total -= 0.5 * ((a - b) ** 2).sum()
    return float(total / (n * (n - 1)))


def normalize(curve, Y, moments=None):
    """Attach the independence factor and the normalised track.

    The normalised track is withheld, and ``zero_normalizer`` set, when the
    factor is within 1e-12 of zero. Local t3 never has one.
    """
    moments = moments or compute_moments(Y)
    spec = curve.spec
    factor = independence_factor(spec, np.asarray(Y, dtype=float), moments)
    if spec.kind == "t3" and spec.scope == "local":
        return replace(curve, factor=0.0, normalized=None, zero_normalizer=False)
    if abs(factor) <= ZERO_TOL:
        return replace(curve, factor=factor, normalized=None, zero_normalizer=True)
    return replace(curve, factor=factor, normalized=curve.values / factor, zero_normalizer=False)


def table_factor(spec, moments, a_i=None):
    """Closed-form independence value in terms of mark moments.

    A cross-check for :func:`independence_factor`: global t1 ``mu_j mu_l``,
    global t2 ``0.5[(mu_j - mu_l)^2 + var_j + var_l]``, global t3
    ``cov_jl``; local t1 ``a_i mu_l`` and local t2
    ``0.5[(a_i - mu_l)^2 + var_l]``. The local forms agree exactly with
    the sample-mean factor when the moments are taken over the other
    ``n - 1`` points with divisor ``n - 1``.
    """
    mu, cov = moments.mean, moments.cov
    j, l = spec.j, spec.l
    if spec.scope == "local":
        if spec.kind == "t1":
            return a_i * mu[l]
        if spec.kind == "t2":
            return 0.5 * ((a_i - mu[l]) ** 2 + cov[l, l])
        return 0.0
    if spec.kind == "t1":
        return mu[j] * mu[l]
    if spec.kind == "t2":
        return 0.5 * ((mu[j] - mu[l]) ** 2 + cov[j, j] + cov[l, l])
    return cov[j, l]
