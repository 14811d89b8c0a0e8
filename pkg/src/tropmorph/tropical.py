"""Max-plus / min-plus semiring arithmetic and morphological scalar operators.

The two semirings replace (+, *) with (max, +) and (min, +) respectively.
Their identity elements for the "additive" reduction are -inf (max-plus)
and +inf (min-plus); IEEE infinities propagate correctly through the inner
`a + b` as long as the opposite infinity never appears, which the matrix
constructor enforces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Semiring(enum.Enum):
    MAX_PLUS = "max-plus"
    MIN_PLUS = "min-plus"

    @property
    def identity(self) -> float:
        return -np.inf if self is Semiring.MAX_PLUS else np.inf


class Mode(enum.Enum):
    MAX = "max"
    MIN = "min"


@dataclass(frozen=True)
class TropicalMatrix:
    """Dense matrix over a tropical semiring.

    Entries may be finite reals or the semiring identity (-inf for max-plus,
    +inf for min-plus).  NaNs and the opposite infinity are rejected so that
    identity + finite = identity holds inside every inner reduction.
    """

    data: np.ndarray
    semiring: Semiring = Semiring.MAX_PLUS

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got ndim={arr.ndim}")
        if np.isnan(arr).any():
            raise ValueError("NaN entries are not allowed in a TropicalMatrix")
        bad = np.isposinf(arr) if self.semiring is Semiring.MAX_PLUS else np.isneginf(arr)
        if bad.any():
            raise ValueError(
                f"{self.semiring.value} matrices may only contain the identity "
                f"element {self.semiring.identity}, not its opposite"
            )
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @classmethod
    def identity_matrix(cls, n: int, semiring: Semiring = Semiring.MAX_PLUS) -> "TropicalMatrix":
        """n x n tropical identity: 0 on the diagonal, semiring identity elsewhere."""
        data = np.full((n, n), semiring.identity)
        np.fill_diagonal(data, 0.0)
        return cls(data, semiring)


def tropical_matmul(a: TropicalMatrix, b: TropicalMatrix) -> TropicalMatrix:
    """Tropical matrix product: out[i,j] = max_q a[i,q] + b[q,j] (or min_q).

    Both operands must live in the same semiring and have compatible shapes.
    """
    if a.semiring is not b.semiring:
        raise ValueError(f"semiring mismatch: {a.semiring.value} vs {b.semiring.value}")
    if a.cols != b.rows:
        raise ValueError(f"dimension mismatch: ({a.rows}x{a.cols}) @ ({b.rows}x{b.cols})")
    # (i, q, j) sums; the inner q axis is reduced by max / min.
    sums = a.data[:, :, None] + b.data[None, :, :]
    if a.semiring is Semiring.MAX_PLUS:
        out = sums.max(axis=1)
    else:
        out = sums.min(axis=1)
    return TropicalMatrix(out, a.semiring)


def dilation(w, x) -> float:
    """delta_w(x) = w0 v (V_i  w_i + x_i): max-plus inner product with the bias
    w0 competing inside the max."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("dilation requires a non-empty input vector")
    if w.shape != (x.size + 1,):
        raise ValueError(f"weight length {w.shape} incompatible with input length {x.size}")
    return float(max(w[0], np.max(w[1:] + x)))


def erosion(m, x) -> float:
    """eps_m(x) = m0 ^ (A_i  m_i + x_i): min-plus dual of `dilation`."""
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("erosion requires a non-empty input vector")
    if m.shape != (x.size + 1,):
        raise ValueError(f"weight length {m.shape} incompatible with input length {x.size}")
    return float(min(m[0], np.min(m[1:] + x)))


def soft_reduce(x, beta: float, mode: Mode) -> float:
    """Log-sum-exp softening of max / min with hardness beta (= 1/h).

    Max mode: (1/beta) * log sum_k exp(beta x_k); Min is the negated dual.
    The extremum is subtracted before exponentiation so large beta (up to
    1e3 and beyond) cannot overflow.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("soft_reduce requires a non-empty vector")
    if mode is Mode.MIN:
        return -soft_reduce(-x, beta, Mode.MAX)
    m = float(np.max(x))
    return m + float(np.log(np.exp(beta * (x - m)).sum())) / beta


@dataclass(frozen=True)
class TropicalPolynomial:
    """Finite max (or min) of affine terms  a_i . x + b_i.

    slopes: (T, n) array of term slope vectors, offsets: (T,) array.
    """

    slopes: np.ndarray
    offsets: np.ndarray
    mode: Mode = Mode.MAX

    def __post_init__(self):
        slopes = np.atleast_2d(np.asarray(self.slopes, dtype=np.float64))
        offsets = np.asarray(self.offsets, dtype=np.float64).ravel()
        if slopes.shape[0] == 0:
            raise ValueError("a tropical polynomial needs at least one term")
        if slopes.shape[0] != offsets.size:
            raise ValueError(f"{slopes.shape[0]} slope rows vs {offsets.size} offsets")
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_terms(self) -> int:
        return self.slopes.shape[0]

    @property
    def input_dim(self) -> int:
        return self.slopes.shape[1]


def tropical_poly_eval(p: TropicalPolynomial, x) -> float:
    """Evaluate max_i (or min_i) of a_i . x + b_i at a single point."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != p.input_dim:
        raise ValueError(f"input dim {x.size} != polynomial dim {p.input_dim}")
    vals = p.slopes @ x + p.offsets
    return float(vals.max() if p.mode is Mode.MAX else vals.min())


def active_terms(p: TropicalPolynomial, points) -> np.ndarray:
    """Indices of terms that attain the extremum somewhere on the sampled points.

    Terms never active on the sample are dominated there and can be dropped
    without changing the surface on that sample.  Tie-break: lowest index.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vals = pts @ p.slopes.T + p.offsets[None, :]
    winners = vals.argmax(axis=1) if p.mode is Mode.MAX else vals.argmin(axis=1)
    return np.unique(winners)
