"""Smooth adaptive activation functions and baseline activations.

A SAAF of degree ``c`` on break points ``a_0 < a_1 < ... < a_n`` is

    f(x) = sum_j v_j x**j / j!  +  sum_k w_k b_k^c(x),      j < c

where ``b_k^0`` is the boxcar of segment ``[a_k, a_{k+1})`` and ``b_k^c`` is its
c-fold iterated integral taken from 0.  Each segment weight ``w_k`` is the c-th
derivative of ``f`` on that segment, so penalising ``w`` bounds smoothness.

Segment indices are 0-based throughout (``w[k]`` belongs to ``[a_k, a_{k+1})``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import UsageError

DEFAULT_SEGMENTS = 22
DEFAULT_LO = -1.1
DEFAULT_HI = 1.1
LRELU_SLOPE = -1.0 / 3.0
PRELU_INIT = 0.25
APLU_SEGMENTS = 5


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BreakGrid:
    """Strictly ascending break points ``a_0 .. a_n`` delimiting ``n`` segments."""

    breaks: np.ndarray

    def __post_init__(self):
        a = _readonly(self.breaks)
        if a.size < 2:
            raise UsageError("a break grid needs at least two break points")
        if not np.all(np.isfinite(a)):
            raise UsageError("break points must be finite")
        if np.any(np.diff(a) <= 0):
            raise UsageError("break points must be strictly ascending")
        object.__setattr__(self, "breaks", a)

    @property
    def n(self) -> int:
        return self.breaks.size - 1

    @property
    def lo(self) -> float:
        return float(self.breaks[0])

    @property
    def hi(self) -> float:
        return float(self.breaks[-1])

    def locate(self, x):
        """Index ``k`` with ``a_k <= x < a_{k+1}``; -1 left of the grid, ``n`` at or beyond ``a_n``."""
        return np.searchsorted(self.breaks, x, side="right") - 1

    def __eq__(self, other):
        return isinstance(other, BreakGrid) and np.array_equal(self.breaks, other.breaks)

    def __hash__(self):
        return hash(self.breaks.tobytes())


def make_uniform_grid(n_segments: int = DEFAULT_SEGMENTS, lo: float = DEFAULT_LO,
                      hi: float = DEFAULT_HI) -> BreakGrid:
    if int(n_segments) != n_segments or n_segments < 1:
        raise UsageError(f"segment count must be a positive integer, got {n_segments!r}")
    if not lo < hi:
        raise UsageError(f"grid range must satisfy lo < hi, got [{lo}, {hi}]")
    return BreakGrid(np.linspace(lo, hi, int(n_segments) + 1))


def _check_degree(c):
    if int(c) != c or c < 0:
        raise UsageError(f"degree must be a non-negative integer, got {c!r}")
    return int(c)


def _tpow(z, m):
    """Truncated power ``z_+**m / m!``; for ``m == 0`` the right-continuous step."""
    if m == 0:
        return (z >= 0).astype(float)
    return np.where(z > 0, z, 0.0) ** m / math.factorial(m)


def _ramp_at_zero(grid: BreakGrid, m: int) -> np.ndarray:
    a = grid.breaks
    return _tpow(-a[:-1], m) - _tpow(-a[1:], m)


def boxcar(k: int, grid: BreakGrid, x):
    """Indicator of ``a_k <= x < a_{k+1}``."""
    if not 0 <= k < grid.n:
        raise UsageError(f"segment index {k} out of range for {grid.n} segments")
    x = np.asarray(x, dtype=float)
    out = ((grid.breaks[k] <= x) & (x < grid.breaks[k + 1])).astype(float)
    return out if out.ndim else float(out)


def basis_matrix(grid: BreakGrid, c: int, x) -> np.ndarray:
    """All segment basis values ``b_k^c(x)``; shape ``x.shape + (n,)``.

    The truncated-power difference is the c-fold antiderivative of the boxcar
    anchored at ``-inf``; subtracting its degree ``c-1`` Taylor polynomial at 0
    re-anchors every integral at 0.
    """
    c = _check_degree(c)
    x = np.asarray(x, dtype=float)
    a = grid.breaks
    z = x[..., None]
    out = _tpow(z - a[:-1], c) - _tpow(z - a[1:], c)
    for j in range(c):
        out -= _ramp_at_zero(grid, c - j) * (z ** j / math.factorial(j))
    return out


def basis(k: int, c: int, grid: BreakGrid, x):
    """Single basis function ``b_k^c(x)``."""
    if not 0 <= k < grid.n:
        raise UsageError(f"segment index {k} out of range for {grid.n} segments")
    sub = BreakGrid(grid.breaks[k:k + 2])
    out = basis_matrix(sub, c, x)[..., 0]
    return out if out.ndim else float(out)


def poly_basis(j: int, x):
    if j < 0:
        raise UsageError("polynomial order must be non-negative")
    x = np.asarray(x, dtype=float)
    out = x ** j / math.factorial(j)
    return out if out.ndim else float(out)


def poly_matrix(c: int, x) -> np.ndarray:
    """Columns ``x**j / j!`` for ``j < c``; shape ``x.shape + (c,)``."""
    x = np.asarray(x, dtype=float)
    if c <= 0:
        return np.zeros(x.shape + (0,))
    return np.stack([x ** j / math.factorial(j) for j in range(c)], axis=-1)


class _SegmentSum:
    """Evaluates ``sum_k w_k b_k^m(x)`` in O(log n) per point.

    Segments left of ``x`` are saturated polynomials in ``x`` whose coefficients
    are prefix sums over ``w_k (a_k**r - a_{k+1}**r)``; only the active segment
    needs a truncated power.
    """

    def __init__(self, grid: BreakGrid, w: np.ndarray, m: int):
        self.grid, self.w, self.m = grid, w, m
        a = grid.breaks
        self.prefix = np.zeros((m + 1, grid.n + 1))
        for r in range(1, m + 1):
            self.prefix[r, 1:] = np.cumsum(w * (a[:-1] ** r - a[1:] ** r))
        self.taylor = [float(w @ _ramp_at_zero(grid, m - j)) for j in range(m)]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        m, a, n = self.m, self.grid.breaks, self.grid.n
        s = self.grid.locate(x)
        left = np.clip(s, 0, n)
        total = np.zeros_like(x)
        for r in range(1, m + 1):
            total += math.comb(m, r) * (-1) ** r * x ** (m - r) * self.prefix[r, left]
        if m:
            total /= math.factorial(m)
        inside = (s >= 0) & (s < n)
        k = np.where(inside, s, 0)
        total += np.where(inside, self.w[k] * _tpow(x - a[k], m), 0.0)
        for j, coef in enumerate(self.taylor):
            total -= coef * x ** j / math.factorial(j)
        return total


class Activation:
    """Common surface of all activation kinds.

    ``apply``/``backprop`` work on a batch ``P`` of shape ``(batch, width)`` with
    parameter arrays carrying a leading unit axis of length 1 (layer-shared) or
    ``width`` (per-neuron).
    """

    kind = "?"

    @property
    def params(self) -> dict:
        return {}

    def with_params(self, **params):
        if params:
            raise UsageError(f"{self.kind} has no trainable parameters")
        return self

    def param_grads(self, x) -> dict:
        return {}

    def apply(self, params, P):
        return self(P)

    def backprop(self, params, P, G):
        return G * self.deriv(P), {}

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class Saaf(Activation):
    """Piecewise polynomial activation of degree ``c`` with fixed break points."""

    grid: BreakGrid
    c: int
    w: np.ndarray
    v: np.ndarray

    kind = "SAAF"

    def __post_init__(self):
        object.__setattr__(self, "c", _check_degree(self.c))
        w, v = _readonly(self.w), _readonly(self.v)
        if w.size != self.grid.n:
            raise UsageError(f"expected {self.grid.n} segment weights, got {w.size}")
        if v.size != self.c:
            raise UsageError(f"expected {self.c} polynomial weights, got {v.size}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)

    @classmethod
    def identity(cls, grid: BreakGrid, c: int) -> "Saaf":
        """Parameters that make ``f(x) = x`` on the grid span.

        c=1 uses unit slopes on every segment (saturating outside the grid);
        c=2 uses ``v_1 = 1`` and zero curvature (identity everywhere).
        """
        c = _check_degree(c)
        if c == 1:
            return cls(grid, 1, np.ones(grid.n), [0.0])
        if c == 0:
            raise UsageError("a degree-0 SAAF cannot represent the identity")
        v = np.zeros(c)
        v[1] = 1.0
        return cls(grid, c, np.zeros(grid.n), v)

    @cached_property
    def _value_sum(self):
        return _SegmentSum(self.grid, self.w, self.c)

    @cached_property
    def _slope_sum(self):
        return _SegmentSum(self.grid, self.w, self.c - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self._value_sum(x) + poly_matrix(self.c, x) @ self.v
        return out if out.ndim else float(out)

    def deriv(self, x):
        """First derivative; right limit where it jumps (c=1 at break points)."""
        if self.c < 1:
            raise UsageError("derivative of a degree-0 SAAF is not defined")
        x = np.asarray(x, dtype=float)
        out = self._slope_sum(x) + poly_matrix(self.c - 1, x) @ self.v[1:]
        return out if out.ndim else float(out)

    @property
    def params(self):
        return {"w": self.w, "v": self.v}

    def with_params(self, w=None, v=None, **extra):
        if extra:
            raise UsageError(f"unknown SAAF parameters: {sorted(extra)}")
        return Saaf(self.grid, self.c, self.w if w is None else w, self.v if v is None else v)

    def param_grads(self, x):
        return {"w": basis_matrix(self.grid, self.c, x), "v": poly_matrix(self.c, x)}

    def apply(self, params, P):
        w = np.broadcast_to(params["w"], (P.shape[-1], self.grid.n))
        v = np.broadcast_to(params["v"], (P.shape[-1], self.c))
        return (np.einsum("bik,ik->bi", basis_matrix(self.grid, self.c, P), w)
                + np.einsum("bij,ij->bi", poly_matrix(self.c, P), v))

    def backprop(self, params, P, G):
        width = P.shape[-1]
        w = np.broadcast_to(params["w"], (width, self.grid.n))
        v = np.broadcast_to(params["v"], (width, self.c))
        gw = np.einsum("bi,bik->ik", G, basis_matrix(self.grid, self.c, P))
        gv = np.einsum("bi,bij->ij", G, poly_matrix(self.c, P))
        if params["w"].shape[0] == 1:
            gw, gv = gw.sum(0, keepdims=True), gv.sum(0, keepdims=True)
        if self.c == 0:
            return np.zeros_like(P), {"w": gw, "v": gv}
        slope = (np.einsum("bik,ik->bi", basis_matrix(self.grid, self.c - 1, P), w)
                 + np.einsum("bij,ij->bi", poly_matrix(self.c - 1, P), v[:, 1:]))
        return G * slope, {"w": gw, "v": gv}

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "breaks": self.grid.breaks.tolist(),
                "w": self.w.tolist(), "v": self.v.tolist()}

    def to_json(self) -> str:
        d = self.to_dict()
        del d["kind"]
        return json.dumps(d)

    @classmethod
    def from_dict(cls, d) -> "Saaf":
        try:
            return cls(BreakGrid(d["breaks"]), d["c"], d["w"], d["v"])
        except KeyError as exc:
            raise UsageError(f"SAAF record is missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "Saaf":
        return cls.from_dict(json.loads(text))


def saaf_eval(f: Saaf, x):
    return f(x)


def saaf_deriv(f: Saaf, x):
    return f.deriv(x)


def saaf_param_grads(f: Saaf, x):
    """Gradients of ``f(x)`` w.r.t. ``w`` and ``v``; exact since ``f`` is linear in both."""
    g = f.param_grads(x)
    return g["w"], g["v"]


class ReLU(Activation):
    kind = "ReLU"

    def __call__(self, x):
        return np.maximum(np.asarray(x, dtype=float), 0.0)

    def deriv(self, x):
        return (np.asarray(x) >= 0).astype(float)


@dataclass(frozen=True)
class LReLU(Activation):
    """Leaky ReLU with a fixed negative-side slope (stored signed, as configured)."""

    slope: float = LRELU_SLOPE

    kind = "LReLU"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, x, self.slope * x)

    def deriv(self, x):
        return np.where(np.asarray(x) >= 0, 1.0, self.slope)

    def to_dict(self):
        return {"kind": self.kind, "slope": self.slope}


@dataclass(frozen=True)
class PReLU(Activation):
    slope: float = PRELU_INIT

    kind = "PReLU"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, x, self.slope * x)

    def deriv(self, x):
        return np.where(np.asarray(x) >= 0, 1.0, self.slope)

    @property
    def params(self):
        return {"slope": np.array([self.slope])}

    def with_params(self, slope=None, **extra):
        if extra:
            raise UsageError(f"unknown PReLU parameters: {sorted(extra)}")
        return self if slope is None else PReLU(float(np.ravel(slope)[0]))

    def param_grads(self, x):
        x = np.asarray(x, dtype=float)
        return {"slope": np.where(x < 0, x, 0.0)[..., None]}

    def apply(self, params, P):
        s = params["slope"].reshape(1, -1)
        return np.where(P >= 0, P, s * P)

    def backprop(self, params, P, G):
        s = params["slope"].reshape(1, -1)
        gs = (G * np.where(P < 0, P, 0.0)).sum(0)
        if params["slope"].shape[0] == 1:
            gs = gs.sum(keepdims=True)
        return G * np.where(P >= 0, 1.0, s), {"slope": gs.reshape(params["slope"].shape)}

    def to_dict(self):
        return {"kind": self.kind, "slope": self.slope}


@dataclass(frozen=True, eq=False)
class APLU(Activation):
    """Adaptive piecewise linear unit: ``max(0, x) + sum_s a_s max(0, b_s - x)``."""

    slopes: np.ndarray
    breaks: np.ndarray

    kind = "APLU"

    def __post_init__(self):
        a, b = _readonly(self.slopes), _readonly(self.breaks)
        if a.size < 1 or a.size != b.size:
            raise UsageError("APLU needs S >= 1 hinges with matching slopes and breaks")
        object.__setattr__(self, "slopes", a)
        object.__setattr__(self, "breaks", b)

    @classmethod
    def default(cls, segments: int = APLU_SEGMENTS, lo: float = DEFAULT_LO, hi: float = DEFAULT_HI):
        return cls(np.zeros(segments), np.linspace(lo, hi, segments))

    @property
    def S(self) -> int:
        return self.slopes.size

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        hinge = np.maximum(self.breaks - x[..., None], 0.0)
        return np.maximum(x, 0.0) + hinge @ self.slopes

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= 0) - (x[..., None] < self.breaks).astype(float) @ self.slopes

    @property
    def params(self):
        return {"slopes": self.slopes, "breaks": self.breaks}

    def with_params(self, slopes=None, breaks=None, **extra):
        if extra:
            raise UsageError(f"unknown APLU parameters: {sorted(extra)}")
        return APLU(self.slopes if slopes is None else slopes,
                    self.breaks if breaks is None else breaks)

    def param_grads(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return {"slopes": np.maximum(self.breaks - x, 0.0),
                "breaks": self.slopes * (x < self.breaks)}

    def apply(self, params, P):
        width = P.shape[-1]
        a = np.broadcast_to(params["slopes"], (width, self.S))
        b = np.broadcast_to(params["breaks"], (width, self.S))
        hinge = np.maximum(b - P[..., None], 0.0)
        return np.maximum(P, 0.0) + np.einsum("bis,is->bi", hinge, a)

    def backprop(self, params, P, G):
        width = P.shape[-1]
        a = np.broadcast_to(params["slopes"], (width, self.S))
        b = np.broadcast_to(params["breaks"], (width, self.S))
        below = (P[..., None] < b).astype(float)
        ga = np.einsum("bi,bis->is", G, np.maximum(b - P[..., None], 0.0))
        gb = np.einsum("bi,bis->is", G, below) * a
        if params["slopes"].shape[0] == 1:
            ga, gb = ga.sum(0, keepdims=True), gb.sum(0, keepdims=True)
        dP = G * ((P >= 0) - np.einsum("bis,is->bi", below, a))
        return dP, {"slopes": ga, "breaks": gb}

    def to_dict(self):
        return {"kind": self.kind, "slopes": self.slopes.tolist(), "breaks": self.breaks.tolist()}


def activation_eval(act: Activation, x):
    return act(x)


def activation_deriv(act: Activation, x):
    return act.deriv(x)


def activation_param_grads(act: Activation, x) -> dict:
    return act.param_grads(x)


def activation_from_dict(d) -> Activation:
    kind = d.get("kind", "SAAF")
    if kind == "SAAF":
        return Saaf.from_dict(d)
    if kind == "ReLU":
        return ReLU()
    if kind == "LReLU":
        return LReLU(float(d.get("slope", LRELU_SLOPE)))
    if kind == "PReLU":
        return PReLU(float(d.get("slope", PRELU_INIT)))
    if kind == "APLU":
        return APLU(d["slopes"], d["breaks"])
    raise UsageError(f"unknown activation kind {kind!r}")


ACTIVATION_NAMES = ("ReLU", "LReLU", "PReLU", "APLU", "SAAFc1", "SAAFc2")


def make_activation(name: str, segments: int = DEFAULT_SEGMENTS, lo: float = DEFAULT_LO,
                    hi: float = DEFAULT_HI, lrelu_slope: float = LRELU_SLOPE) -> Activation:
    """Activation template with its default initial parameters."""
    if name == "ReLU":
        return ReLU()
    if name == "LReLU":
        return LReLU(lrelu_slope)
    if name == "PReLU":
        return PReLU(PRELU_INIT)
    if name == "APLU":
        return APLU.default(APLU_SEGMENTS, lo, hi)
    if name in ("SAAFc1", "SAAFc2"):
        return Saaf.identity(make_uniform_grid(segments, lo, hi), int(name[-1]))
    raise UsageError(f"unknown activation {name!r}; valid names: {', '.join(ACTIVATION_NAMES)}")
