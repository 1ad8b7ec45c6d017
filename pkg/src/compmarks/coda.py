r"""Compositional geometry on the simplex.

Compositions are vectors of strictly positive parts that carry only
relative information. Everything downstream works on log-ratio
coordinates, so this module supplies closure, the geometric mean and the
additive (alr), centred (clr) and isometric (ilr) log-ratio transforms
together with their inverses.

The array functions follow the numpy convention of operating along the
last axis, so a single composition of shape ``(D,)`` and a mark matrix
of shape ``(n, D)`` are handled alike. :class:`Composition` and
:class:`LogRatioVector` wrap single vectors when a validated, tagged
value is wanted.

Indices are zero-based throughout the library; the CLI translates the
one-based part numbers users write in configuration files.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    AllZeroError,
    BadDimensionError,
    BadIndexError,
    DataError,
    DimensionMismatchError,
    ZeroPartError,
)

__all__ = [
    "Composition",
    "LogRatioVector",
    "ContrastMatrix",
    "ZeroReplacement",
    "closure",
    "validate_and_close",
    "geometric_mean",
    "clr",
    "clr_inv",
    "alr",
    "alr_inv",
    "build_basis",
    "ilr",
    "ilr_inv",
    "Transform",
]

CLOSURE_RTOL = 1e-9


@dataclass(frozen=True)
class ZeroReplacement:
    """Multiplicative replacement of zero parts by ``delta``.

    ``delta`` is expressed on the scale of the closed composition, i.e. as
    a fraction of the sum constant.
    """

    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise DataError(f"replacement delta must lie in (0, 1), got {self.delta}")


def closure(mat, total=1.0):
    """Rescale rows so that each sums to ``total``.

    Parameters
    ----------
    mat : array_like, shape (..., D)
        Nonnegative parts.
    total : float
        Sum constant of the result.

    Returns
    -------
    ndarray
        Array of the same shape whose last axis sums to ``total``.
    """
    mat = np.asarray(mat, dtype=float)
    if np.any(mat < 0):
        raise ZeroPartError("compositions cannot have negative parts")
    sums = mat.sum(axis=-1, keepdims=True)
    if np.any(sums == 0):
        raise AllZeroError("cannot close a composition whose parts are all zero")
    return total * mat / sums


def _multiplicative_replacement(closed, delta, total):
    zero = closed == 0
    n_zero = zero.sum(axis=-1, keepdims=True)
    scale = 1.0 - n_zero * delta
    if np.any(scale <= 0):
        raise DataError("replacement delta too large for the number of zero parts")
    replaced = np.where(zero, delta * total, closed * scale)
    return replaced


def validate_and_close(raw, total=1.0, zero_policy="reject"):
    """Validate raw parts and close them to a :class:`Composition`.

    Parameters
    ----------
    raw : sequence of float
        Nonnegative parts, any scale (counts, percentages, proportions).
    total : float
        Sum constant of the closed composition.
    zero_policy : "reject" or ZeroReplacement
        ``"reject"`` raises :class:`ZeroPartError` on any part that is not
        strictly positive. A :class:`ZeroReplacement` substitutes zeros
        multiplicatively and re-closes.

    Examples
    --------
    >>> validate_and_close([2, 1, 1]).parts
    (0.5, 0.25, 0.25)
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError("raw composition must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise DataError("composition parts must be finite")
    if np.any(arr < 0):
        raise ZeroPartError(f"negative part in {arr.tolist()}")
    if np.all(arr == 0):
        raise AllZeroError("all parts are zero")
    if zero_policy == "reject":
        if np.any(arr == 0):
            raise ZeroPartError(f"zero part in {arr.tolist()}")
        closed = closure(arr, total)
    elif isinstance(zero_policy, ZeroReplacement):
        closed = closure(arr, 1.0)
        closed = _multiplicative_replacement(closed, zero_policy.delta, 1.0)
        closed = closure(closed, total)
    else:
        raise DataError(f"unknown zero policy {zero_policy!r}")
    return Composition(tuple(closed.tolist()), total)


@dataclass(frozen=True)
class Composition:
    """A point in the D-part simplex with sum constant ``total``."""

    parts: tuple
    total: float = 1.0

    def __post_init__(self):
        parts = np.asarray(self.parts, dtype=float)
        if parts.ndim != 1 or parts.size < 2:
            raise BadDimensionError("a composition needs at least two parts")
        if not self.total > 0:
            raise DataError("sum constant must be positive")
        if np.any(parts <= 0):
            raise ZeroPartError(f"composition parts must be strictly positive: {parts.tolist()}")
        s = parts.sum()
        if abs(s - self.total) > CLOSURE_RTOL * self.total:
            raise DataError(f"parts sum to {s}, expected {self.total}")
        # renormalise exactly: absorbs CSV round-trip noise
        object.__setattr__(self, "parts", tuple((parts * (self.total / s)).tolist()))

    @property
    def D(self):
        return len(self.parts)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.parts, dtype=dtype)

    def __len__(self):
        return len(self.parts)


@dataclass(frozen=True)
class LogRatioVector:
    """Log-ratio coordinates tagged with the transform that produced them.

    ``tag`` is ``"clr"``, ``"alr"`` or ``"ilr"``. ``ref`` holds the alr
    reference part and ``basis`` the ilr contrast matrix.
    """

    coords: tuple
    tag: str
    ref: int | None = None
    basis: "ContrastMatrix | None" = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", tuple(coords.tolist()))
        if self.tag == "clr":
            if abs(coords.sum()) > 1e-9:
                raise DataError("clr coordinates must sum to zero")
        elif self.tag == "alr":
            if self.ref is None:
                raise DataError("alr vectors need a reference index")
        elif self.tag == "ilr":
            if self.basis is None:
                raise DataError("ilr vectors need a basis")
            if self.basis.D - 1 != coords.size:
                raise DimensionMismatchError("ilr dimension does not match its basis")
        else:
            raise DataError(f"unknown transform tag {self.tag!r}")

    @property
    def dimension(self):
        return len(self.coords)

    @property
    def D(self):
        """Number of parts of the composition these coordinates describe."""
        return self.dimension if self.tag == "clr" else self.dimension + 1

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True, eq=False)
class ContrastMatrix:
    """Orthonormal basis of the clr hyperplane, one row per basis vector."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] - 1:
            raise DimensionMismatchError("contrast matrix must have shape (D-1, D)")
        if not np.allclose(rows @ rows.T, np.eye(rows.shape[0]), rtol=0, atol=1e-10):
            raise DataError("contrast rows are not orthonormal")
        if not np.allclose(rows.sum(axis=1), 0, rtol=0, atol=1e-10):
            raise DataError("contrast rows must sum to zero")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def D(self):
        return self.rows.shape[1]

    def __eq__(self, other):
        return isinstance(other, ContrastMatrix) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())


def _as_parts(c):
    if isinstance(c, Composition):
        return np.asarray(c.parts)
    arr = np.asarray(c, dtype=float)
    if arr.shape[-1] < 2:
        raise BadDimensionError("compositions need at least two parts")
    if np.any(arr <= 0):
        raise ZeroPartError("log-ratio transforms need strictly positive parts")
    return arr


def geometric_mean(c):
    """Geometric mean of the parts, computed as ``exp(mean(log c))``."""
    return np.exp(np.log(_as_parts(c)).mean(axis=-1))


def clr(c):
    """Centred log-ratio transform ``log(c_j / g(c))``.

    Returns a :class:`LogRatioVector` for a :class:`Composition` and an
    ndarray of the same shape otherwise.
    """
    logs = np.log(_as_parts(c))
    out = logs - logs.mean(axis=-1, keepdims=True)
    if isinstance(c, Composition):
        return LogRatioVector(tuple(out.tolist()), "clr")
    return out


def clr_inv(v, total=1.0):
    """Inverse clr: exponentiate and close."""
    coords = np.asarray(v, dtype=float)
    if isinstance(v, LogRatioVector) and v.tag != "clr":
        raise DimensionMismatchError(f"expected clr coordinates, got {v.tag}")
    # shift by the max for overflow safety; closure removes it
    e = np.exp(coords - coords.max(axis=-1, keepdims=True))
    out = closure(e, total)
    if isinstance(v, LogRatioVector):
        return Composition(tuple(out.tolist()), total)
    return out


def _check_ref(ref, D):
    if not isinstance(ref, (int, np.integer)) or not -D <= ref < D:
        raise BadIndexError(f"reference part {ref} out of range for D={D}")
    return int(ref) % D


def alr(c, ref=-1):
    """Additive log-ratio transform ``log(c_j / c_ref)`` for ``j != ref``.

    Parts keep their original order with the reference part dropped.
    """
    parts = _as_parts(c)
    ref = _check_ref(ref, parts.shape[-1])
    logs = np.log(parts)
    out = np.delete(logs, ref, axis=-1) - logs[..., ref:ref + 1]
    if isinstance(c, Composition):
        return LogRatioVector(tuple(out.tolist()), "alr", ref=ref)
    return out


def alr_inv(v, ref=None, total=1.0):
    """Inverse alr; ``ref`` defaults to the tag of a :class:`LogRatioVector`."""
    coords = np.asarray(v, dtype=float)
    if isinstance(v, LogRatioVector):
        if v.tag != "alr":
            raise DimensionMismatchError(f"expected alr coordinates, got {v.tag}")
        ref = v.ref if ref is None else ref
    D = coords.shape[-1] + 1
    ref = _check_ref(-1 if ref is None else ref, D)
    full = np.insert(coords, ref, 0.0, axis=-1)
    out = clr_inv(full, total)
    if isinstance(v, LogRatioVector):
        return Composition(tuple(out.tolist()), total)
    return out


@lru_cache(maxsize=None)
def build_basis(D):
    """Orthonormal ilr basis from the sequential binary partition.

    Row ``a`` contrasts part ``a`` against parts ``a+1 .. D-1``; this is
    what Gram-Schmidt produces on those partitions. The first nonzero
    entry of each row is positive.

    Examples
    --------
    >>> build_basis(2).rows
    array([[ 0.70710678, -0.70710678]])
    """
    if not isinstance(D, (int, np.integer)) or D < 2:
        raise BadDimensionError(f"ilr basis needs D >= 2, got {D}")
    D = int(D)
    rows = np.zeros((D - 1, D))
    for a in range(D - 1):
        rest = D - a - 1
        scale = np.sqrt(rest / (rest + 1.0))
        rows[a, a] = scale
        rows[a, a + 1:] = -scale / rest
    return ContrastMatrix(rows)


def _basis_rows(basis, D):
    if basis is None:
        basis = build_basis(D)
    if basis.D != D:
        raise DimensionMismatchError(f"basis is for D={basis.D}, composition has D={D}")
    return basis, basis.rows


def ilr(c, basis=None):
    """Isometric log-ratio coordinates: inner products of clr(c) with the basis."""
    parts = _as_parts(c)
    basis, rows = _basis_rows(basis, parts.shape[-1])
    out = clr(parts) @ rows.T
    if isinstance(c, Composition):
        return LogRatioVector(tuple(out.tolist()), "ilr", basis=basis)
    return out


def ilr_inv(v, basis=None, total=1.0):
    """Inverse ilr."""
    coords = np.asarray(v, dtype=float)
    if isinstance(v, LogRatioVector):
        if v.tag != "ilr":
            raise DimensionMismatchError(f"expected ilr coordinates, got {v.tag}")
        basis = v.basis if basis is None else basis
    D = coords.shape[-1] + 1
    basis, rows = _basis_rows(basis, D)
    out = clr_inv(coords @ rows, total)
    if isinstance(v, LogRatioVector):
        return Composition(tuple(out.tolist()), total)
    return out


@dataclass(frozen=True)
class Transform:
    """A log-ratio transform choice: ``clr``, ``alr`` (with ``ref``) or ``ilr``.

    ``Transform.parse("alr:3")`` reads the one-based CLI form.
    """

    kind: str = "clr"
    ref: int | None = None

    def __post_init__(self):
        if self.kind not in ("clr", "alr", "ilr"):
            raise DataError(f"unknown transform {self.kind!r}")
        if self.kind == "alr" and self.ref is None:
            object.__setattr__(self, "ref", -1)
        if self.kind != "alr" and self.ref is not None:
            raise DataError("only alr takes a reference part")

    @classmethod
    def parse(cls, text):
        text = str(text).strip().lower()
        if text.startswith("alr"):
            _, _, ref = text.partition(":")
            return cls("alr", int(ref) - 1 if ref else -1)
        return cls(text)

    def label(self, D=None):
        if self.kind == "alr":
            ref = self.ref if D is None else self.ref % D
            return f"alr:{ref + 1}" if ref >= 0 else "alr"
        return self.kind

    def dimension(self, D):
        return D if self.kind == "clr" else D - 1

    def apply(self, marks):
        """Transform an ``(n, D)`` mark matrix row by row."""
        if self.kind == "clr":
            return clr(marks)
        if self.kind == "alr":
            return alr(marks, self.ref)
        return ilr(marks)
