"""Complex linear algebra and quantum-information primitives.

Conventions
-----------
Density matrices and measurement operators are plain ``numpy`` arrays of
``complex128``.  A bipartite state lives on ``dim_a * dim_b`` dimensions with
Alice's index major: ``rho[(i, j), (k, l)] = rho_full[i*dim_b + j, k*dim_b + l]``.

The generalized Gell-Mann basis used throughout is ordered as

    G_0 = sqrt(2/d) * I,
    symmetric pairs  E_jk + E_kj            for j < k (row-major),
    antisymmetric    -i E_jk + i E_kj       for j < k (row-major),
    diagonal         sqrt(2/(l(l+1))) (sum_{j<=l} E_jj - l E_{l+1,l+1}).

Every basis element satisfies ``tr(G_mu G_nu) = 2 delta_{mu nu}``; for d = 2
this reduces to ``(I, sigma_x, sigma_y, sigma_z)``.

All numerical tolerances used by validators live in this module so that
validators and tests agree on a single table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeError, ValidationError

# Central tolerance table.
HERMITIAN_TOL = 1e-12        # hermiticity of density matrices (max-norm)
HERMITIAN_INPUT_TOL = 1e-10  # hermiticity gate on trace-distance inputs
PSD_TOL = 1e-10              # smallest eigenvalue >= -PSD_TOL
TRACE_TOL = 1e-12            # |tr(rho) - 1| for normalized states
COMPLETENESS_TOL = 1e-10     # || sum_a M_a - I ||_max for measurements
PVM_TOL = 1e-10              # idempotency / orthogonality of projectors
COEFF_ROUNDTRIP_TOL = 1e-10  # coefficient-vector reconstruction on measurements
GM_ORTHO_TOL = 1e-12         # tr(G_mu G_nu) = 2 delta check
NO_SIGNALING_TOL = 1e-10     # marginal consistency of assemblages
REPARAM_TOL = 1e-12          # validity of reparameterized hidden states
EIG_SMOOTHING = 1e-12        # eps in |x| ~= sqrt(x^2 + eps) on the gradient path
NORM_FLOOR = 1e-30           # tr(M M^dag) below this counts as degenerate

Complex = NDArray[np.complex128]


@dataclass(frozen=True)
class GellMannBasis:
    """Orthogonal Hermitian basis of d x d matrices, identity-first order."""

    dim: int
    matrices: Complex = field(repr=False)  # shape (d*d, d, d)

    def __len__(self) -> int:
        return self.dim * self.dim


@lru_cache(maxsize=None)
def gellmann_basis(d: int) -> GellMannBasis:
    """Return the generalized Gell-Mann basis for dimension ``d >= 2``.

    The first element is ``sqrt(2/d) I``; the remaining ``d^2 - 1`` matrices
    are traceless and Hermitian.  ``tr(G_mu G_nu) = 2 delta_{mu nu}`` holds for
    every pair.
    """
    if not isinstance(d, (int, np.integer)) or d < 2:
        raise ValidationError(f"Gell-Mann basis needs integer dimension d >= 2, got {d!r}")
    mats = np.zeros((d * d, d, d), dtype=np.complex128)
    mats[0] = np.sqrt(2.0 / d) * np.eye(d)
    idx = 1
    for j in range(d):
        for k in range(j + 1, d):
            mats[idx, j, k] = 1.0
            mats[idx, k, j] = 1.0
            idx += 1
    for j in range(d):
        for k in range(j + 1, d):
            mats[idx, j, k] = -1.0j
            mats[idx, k, j] = 1.0j
            idx += 1
    for l in range(1, d):
        scale = np.sqrt(2.0 / (l * (l + 1)))
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        mats[idx] = scale * np.diag(diag)
        idx += 1
    mats.setflags(write=False)
    return GellMannBasis(dim=int(d), matrices=mats)


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


def validate_density_matrix(
    rho: np.ndarray,
    *,
    normalized: bool = True,
    name: str = "state",
) -> Complex:
    """Check Hermiticity, positivity and trace of a density matrix.

    ``normalized=False`` accepts assemblage elements, whose trace may be any
    value in [0, 1].  Returns the validated ``complex128`` array.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"{name}: expected a square matrix, got shape {rho.shape}")
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    if herm > HERMITIAN_TOL:
        raise ValidationError(f"{name}: not Hermitian (max |M - M^dag| = {herm:.3e})")
    min_eig = float(np.linalg.eigvalsh(rho)[0])
    if min_eig < -PSD_TOL:
        raise ValidationError(f"{name}: not positive semidefinite (min eigenvalue = {min_eig:.3e})")
    tr = float(np.trace(rho).real)
    if normalized:
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValidationError(f"{name}: trace = {tr!r}, expected 1")
    else:
        if tr < -TRACE_TOL or tr > 1.0 + TRACE_TOL:
            raise ValidationError(f"{name}: trace = {tr!r}, expected within [0, 1]")
    return rho


def partial_trace_a(rho_ab: np.ndarray, dim_a: int, dim_b: int) -> Complex:
    """Trace out the first (Alice) factor of a bipartite operator."""
    rho_ab = np.asarray(rho_ab, dtype=np.complex128)
    n = dim_a * dim_b
    if rho_ab.shape != (n, n):
        raise ShapeError(
            f"partial_trace_a: state has shape {rho_ab.shape}, expected ({n}, {n}) "
            f"for dim_a={dim_a}, dim_b={dim_b}"
        )
    r = rho_ab.reshape(dim_a, dim_b, dim_a, dim_b)
    return np.einsum("ijil->jl", r)


def partial_trace_b(rho_ab: np.ndarray, dim_a: int, dim_b: int) -> Complex:
    """Trace out the second (Bob) factor of a bipartite operator."""
    rho_ab = np.asarray(rho_ab, dtype=np.complex128)
    n = dim_a * dim_b
    if rho_ab.shape != (n, n):
        raise ShapeError(
            f"partial_trace_b: state has shape {rho_ab.shape}, expected ({n}, {n}) "
            f"for dim_a={dim_a}, dim_b={dim_b}"
        )
    r = rho_ab.reshape(dim_a, dim_b, dim_a, dim_b)
    return np.einsum("ijkj->ik", r)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Trace distance ``(1/2) tr|A - B|`` between two Hermitian operators."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace_distance: incompatible shapes {a.shape} and {b.shape}")
    for m, name in ((a, "first"), (b, "second")):
        dev = float(np.max(np.abs(m - m.conj().T)))
        if dev > HERMITIAN_INPUT_TOL:
            raise ValidationError(
                f"trace_distance: {name} argument is not Hermitian (max deviation {dev:.3e})"
            )
    eigs = np.linalg.eigvalsh(a - b)
    return float(0.5 * np.abs(eigs).sum())


def quantum_assemblage(rho_ab: np.ndarray, measurement) -> Complex:
    """Conditional (unnormalized) states on Bob's side for one measurement.

    ``measurement`` is either a ``Measurement`` or a raw stack of operators of
    shape ``(O, d_a, d_a)``.  Element ``a`` of the result is
    ``tr_A[(M_a (x) I) rho_ab]``.
    """
    elements = np.asarray(getattr(measurement, "elements", measurement), dtype=np.complex128)
    if elements.ndim != 3 or elements.shape[1] != elements.shape[2]:
        raise ShapeError(f"quantum_assemblage: elements have shape {elements.shape}")
    dim_a = elements.shape[1]
    rho_ab = np.asarray(rho_ab, dtype=np.complex128)
    if rho_ab.shape[0] % dim_a != 0:
        raise ShapeError(
            f"quantum_assemblage: state dim {rho_ab.shape[0]} not divisible by "
            f"measurement dim {dim_a}"
        )
    dim_b = rho_ab.shape[0] // dim_a
    r = rho_ab.reshape(dim_a, dim_b, dim_a, dim_b)
    # sigma_a[j, l] = sum_{p, q} M_a[p, q] rho[(q, j), (p, l)]
    return np.einsum("apq,qjpl->ajl", elements, r)


def assemblage_batch(rho_ab: np.ndarray, elements: np.ndarray) -> Complex:
    """Vectorized ``quantum_assemblage`` over a stack of measurements.

    ``elements`` has shape ``(batch, O, d_a, d_a)``; the result has shape
    ``(batch, O, d_b, d_b)``.
    """
    elements = np.asarray(elements, dtype=np.complex128)
    dim_a = elements.shape[-1]
    dim_b = rho_ab.shape[0] // dim_a
    r = np.asarray(rho_ab, dtype=np.complex128).reshape(dim_a, dim_b, dim_a, dim_b)
    return np.einsum("xapq,qjpl->xajl", elements, r)


def assemblage_distance(s1: np.ndarray, s2: np.ndarray) -> float:
    """Sum of per-outcome trace distances between two assemblages."""
    s1 = np.asarray(s1, dtype=np.complex128)
    s2 = np.asarray(s2, dtype=np.complex128)
    if s1.shape != s2.shape:
        raise ShapeError(f"assemblage_distance: incompatible shapes {s1.shape} and {s2.shape}")
    return float(sum(trace_distance(x, y) for x, y in zip(s1, s2)))
