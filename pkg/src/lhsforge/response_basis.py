"""Feature maps over measurement-operator coefficient space.

Two families:

* ``odd_harmonics`` — real solid spherical harmonics of every odd degree
  ``l in {1, 3, ..., D}`` evaluated on a Bloch 3-vector.  These are
  homogeneous polynomials, so ``B(-g) = -B(g)`` holds exactly in floating
  point.  Components are scaled to unit mean square over the uniform sphere;
  within a degree the order is the cosine/sine pair for |m| = 1, 2, ..., l
  followed by the zonal (m = 0) term, so the degree-1 block is
  ``sqrt(3) * (x, y, z)``.

* ``monomial_features`` — all monomials of total degree 1..D in the input
  components, graded-lexicographic order, no constant term.

Feature tables (monomial exponents and weights) are built once per order from
exact rational arithmetic and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, factorial, sqrt

import numpy as np

from .errors import ValidationError

Poly = dict[tuple[int, int, int], Fraction]


def _poly_mul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for (a1, b1, c1), x in p.items():
        for (a2, b2, c2), y in q.items():
            key = (a1 + a2, b1 + b2, c1 + c2)
            out[key] = out.get(key, Fraction(0)) + x * y
    return {k: v for k, v in out.items() if v != 0}


def _poly_pow(p: Poly, n: int) -> Poly:
    out: Poly = {(0, 0, 0): Fraction(1)}
    for _ in range(n):
        out = _poly_mul(out, p)
    return out


_R2: Poly = {(2, 0, 0): Fraction(1), (0, 2, 0): Fraction(1), (0, 0, 2): Fraction(1)}


def _sectoral(m: int, imaginary: bool) -> Poly:
    """Re or Im of (x + iy)^m as a polynomial in (x, y)."""
    out: Poly = {}
    for j in range(m + 1):
        if (j % 2 == 1) != imaginary:
            continue
        sign = (-1) ** (j // 2) if not imaginary else (-1) ** ((j - 1) // 2)
        out[(m - j, j, 0)] = Fraction(sign * comb(m, j))
    return out or {(0, 0, 0): Fraction(1)}  # m = 0, real part


def _zonal_part(ell: int, m: int) -> Poly:
    """The (z, r^2) polynomial multiplying the sectoral factor."""
    out: Poly = {}
    for k in range((ell - m) // 2 + 1):
        coeff = Fraction((-1) ** k * comb(ell, k) * comb(2 * ell - 2 * k, ell), 2 ** ell)
        coeff *= Fraction(factorial(ell - 2 * k), factorial(ell - 2 * k - m))
        term = _poly_pow(_R2, k)
        term = {(a, b, c + ell - 2 * k - m): coeff * v for (a, b, c), v in term.items()}
        for key, v in term.items():
            out[key] = out.get(key, Fraction(0)) + v
    return out


def _solid_harmonic(ell: int, m: int) -> tuple[Poly, float]:
    """Polynomial part and normalization of the real solid harmonic Y_{l,m}.

    Scaled so the mean square over the unit sphere is 1.
    """
    am = abs(m)
    poly = _poly_mul(_zonal_part(ell, am), _sectoral(am, imaginary=m < 0))
    norm2 = Fraction((2 * ell + 1) * (1 if m == 0 else 2) * factorial(ell - am),
                     factorial(ell + am))
    return poly, sqrt(float(norm2))


@lru_cache(maxsize=None)
def _odd_harmonic_table(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Monomial exponents (M, 3) and weight matrix (M, N) for odd degrees <= order."""
    polys: list[Poly] = []
    scales: list[float] = []
    for ell in range(1, order + 1, 2):
        orders = [m for mm in range(1, ell + 1) for m in (mm, -mm)] + [0]
        for m in orders:
            poly, scale = _solid_harmonic(ell, m)
            polys.append(poly)
            scales.append(scale)
    monomials = sorted({key for p in polys for key in p})
    index = {key: i for i, key in enumerate(monomials)}
    weights = np.zeros((len(monomials), len(polys)))
    for n, (poly, scale) in enumerate(zip(polys, scales)):
        for key, coeff in poly.items():
            weights[index[key], n] = float(coeff) * scale
    exps = np.array(monomials, dtype=np.int64)
    exps.setflags(write=False)
    weights.setflags(write=False)
    return exps, weights


@lru_cache(maxsize=None)
def _monomial_exponents(input_dim: int, order: int) -> np.ndarray:
    """Exponent rows for all monomials of total degree 1..order, graded-lex."""
    rows = []
    for degree in range(1, order + 1):
        for combo in combinations_with_replacement(range(input_dim), degree):
            row = np.zeros(input_dim, dtype=np.int64)
            for var in combo:
                row[var] += 1
            rows.append(row)
    exps = np.array(rows, dtype=np.int64)
    exps.setflags(write=False)
    return exps


@dataclass(frozen=True)
class FeatureMap:
    """A fixed polynomial feature family over coefficient vectors."""

    kind: str  # "odd_harmonics" | "monomials"
    order: int
    input_dim: int
    n_features: int

    def __call__(self, g: np.ndarray) -> np.ndarray:
        return evaluate(self, g)


def odd_harmonic_map(order: int) -> FeatureMap:
    if order < 1 or order % 2 == 0:
        raise ValidationError(f"odd-harmonic order must be odd and >= 1, got {order}")
    n = (order + 1) * (order + 2) // 2
    return FeatureMap(kind="odd_harmonics", order=order, input_dim=3, n_features=n)


def monomial_map(order: int, input_dim: int) -> FeatureMap:
    if order < 1:
        raise ValidationError(f"monomial order must be >= 1, got {order}")
    if input_dim < 1:
        raise ValidationError(f"input_dim must be >= 1, got {input_dim}")
    n = comb(input_dim + order, order) - 1
    return FeatureMap(kind="monomials", order=order, input_dim=input_dim, n_features=n)


def _powers(g: np.ndarray, order: int) -> np.ndarray:
    """Stack (..., order + 1, dim) of elementwise powers g^0 .. g^order."""
    out = np.ones((order + 1,) + g.shape, dtype=np.float64)
    for k in range(1, order + 1):
        out[k] = out[k - 1] * g
    return np.moveaxis(out, 0, -2)


def odd_harmonics(order: int, g: np.ndarray) -> np.ndarray:
    """Odd real solid harmonics up to degree ``order`` of Bloch vectors ``g``.

    ``g`` has shape (..., 3); the result has shape (..., N) with
    N = (order + 1)(order + 2) / 2.
    """
    fm = odd_harmonic_map(order)
    return evaluate(fm, g)


def monomial_features(order: int, g: np.ndarray) -> np.ndarray:
    """All monomials of total degree 1..order of ``g``, graded-lex order."""
    g = np.asarray(g, dtype=np.float64)
    fm = monomial_map(order, g.shape[-1])
    return evaluate(fm, g)


def evaluate(fm: FeatureMap, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != fm.input_dim:
        raise ValidationError(
            f"feature map expects input_dim = {fm.input_dim}, got {g.shape[-1]}"
        )
    pw = _powers(g, fm.order)
    if fm.kind == "odd_harmonics":
        exps, weights = _odd_harmonic_table(fm.order)
        vals = pw[..., exps[:, 0], 0] * pw[..., exps[:, 1], 1] * pw[..., exps[:, 2], 2]
        return vals @ weights
    exps = _monomial_exponents(fm.input_dim, fm.order)
    vals = pw[..., exps[:, 0], 0]
    for var in range(1, fm.input_dim):
        vals = vals * pw[..., exps[:, var], var]
    return vals
