"""Measurement classes, samplers and Gell-Mann coefficient extraction.

Three families are supported:

* the fixed Pauli triple (X, Y, Z eigenbases on a qubit),
* Haar-random projective measurements (rank-1 projectors from the columns of
  a Haar-random unitary, Ginibre + QR with phase-fixed R diagonal),
* random POVMs (Wishart elements renormalized by the inverse square root of
  their sum, so completeness holds by construction).

Samplers take an explicit ``numpy.random.Generator``; the produced sequence
is a deterministic function of the generator state.  Batched variants return
stacked arrays and are what the training loop consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .quantum_core import (
    COEFF_ROUNDTRIP_TOL,
    COMPLETENESS_TOL,
    HERMITIAN_INPUT_TOL,
    PSD_TOL,
    PVM_TOL,
    Complex,
    GellMannBasis,
    gellmann_basis,
)

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)

KINDS = ("pauli_triple", "qubit_pvm", "qudit_pvm", "povm")


@dataclass(frozen=True)
class MeasurementClass:
    """A family of measurements: kind, dimension and outcome count."""

    kind: str
    d: int = 2
    n_outcomes: int = 0  # 0 means the kind's default

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown measurement kind {self.kind!r}; pick from {KINDS}")
        if self.kind in ("pauli_triple", "qubit_pvm") and self.d != 2:
            raise ValidationError(f"{self.kind} requires d = 2, got {self.d}")
        if self.d < 2:
            raise ValidationError(f"measurement dimension must be >= 2, got {self.d}")
        n = self.n_outcomes or self.default_outcomes(self.kind, self.d)
        object.__setattr__(self, "n_outcomes", n)
        if self.kind in ("pauli_triple", "qubit_pvm") and n != 2:
            raise ValidationError(f"{self.kind} is dichotomic, got n_outcomes = {n}")
        if self.kind == "qudit_pvm" and n != self.d:
            raise ValidationError(f"qudit_pvm has d outcomes, got n_outcomes = {n}")
        if self.kind == "povm" and not 2 <= n <= self.d * self.d:
            raise ValidationError(
                f"povm outcome count must lie in [2, d^2] = [2, {self.d * self.d}], got {n}"
            )

    @staticmethod
    def default_outcomes(kind: str, d: int) -> int:
        if kind in ("pauli_triple", "qubit_pvm"):
            return 2
        if kind == "qudit_pvm":
            return d
        return d * d  # povm: extremal maximum

    @property
    def is_projective(self) -> bool:
        return self.kind != "povm"


@dataclass(frozen=True)
class Measurement:
    """Ordered POVM elements with cached Gell-Mann coefficient vectors."""

    dim: int
    elements: Complex = field(repr=False)   # (O, d, d)
    gm_coeffs: np.ndarray = field(repr=False)  # (O, d^2) real
    is_pvm: bool = False

    @property
    def n_outcomes(self) -> int:
        return self.elements.shape[0]


def gellmann_coeffs(m: np.ndarray, basis: GellMannBasis) -> np.ndarray:
    """Expansion coefficients ``g_mu = sqrt(d/2) tr(M G_mu)`` of a Hermitian M.

    The inverse map is ``M = (1/sqrt(2d)) sum_mu g_mu G_mu``; the round trip
    is exact to machine precision.
    """
    m = np.asarray(m, dtype=np.complex128)
    d = basis.dim
    if m.shape != (d, d):
        raise ShapeError(f"gellmann_coeffs: matrix shape {m.shape} does not match d = {d}")
    dev = float(np.max(np.abs(m - m.conj().T)))
    if dev > HERMITIAN_INPUT_TOL:
        raise ValidationError(f"gellmann_coeffs: input not Hermitian (max deviation {dev:.3e})")
    g = np.sqrt(d / 2.0) * np.einsum("mij,ji->m", basis.matrices, m)
    return np.ascontiguousarray(g.real)


def coeffs_to_matrix(g: np.ndarray, basis: GellMannBasis) -> Complex:
    """Rebuild ``(1/sqrt(2d)) sum_mu g_mu G_mu`` from a coefficient vector."""
    g = np.asarray(g, dtype=np.float64)
    d = basis.dim
    if g.shape != (d * d,):
        raise ShapeError(f"coeffs_to_matrix: expected {d * d} coefficients, got {g.shape}")
    return np.einsum("m,mij->ij", g, basis.matrices) / np.sqrt(2.0 * d)


def coeff_batch(elements: np.ndarray, basis: GellMannBasis) -> np.ndarray:
    """Coefficient vectors for a stacked array of Hermitian operators."""
    scale = np.sqrt(basis.dim / 2.0)
    return scale * np.einsum("mij,...ji->...m", basis.matrices, elements).real


def _measurement_from_elements(elements: np.ndarray, is_pvm: bool) -> Measurement:
    elements = np.asarray(elements, dtype=np.complex128)
    d = elements.shape[-1]
    coeffs = coeff_batch(elements, gellmann_basis(d))
    elements.setflags(write=False)
    coeffs.setflags(write=False)
    return Measurement(dim=d, elements=elements, gm_coeffs=coeffs, is_pvm=is_pvm)


def validate_measurement(meas: Measurement) -> None:
    """Check positivity, completeness, coefficient round-trip and, for PVMs,
    idempotency plus pairwise orthogonality."""
    elems = meas.elements
    d = meas.dim
    for a, m in enumerate(elems):
        dev = float(np.max(np.abs(m - m.conj().T)))
        if dev > HERMITIAN_INPUT_TOL:
            raise ValidationError(f"element {a}: not Hermitian (deviation {dev:.3e})")
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig < -PSD_TOL:
            raise ValidationError(f"element {a}: min eigenvalue {min_eig:.3e} < -{PSD_TOL}")
    dev = float(np.max(np.abs(elems.sum(axis=0) - np.eye(d))))
    if dev > COMPLETENESS_TOL:
        raise ValidationError(f"completeness violated: ||sum M_a - I||_max = {dev:.3e}")
    basis = gellmann_basis(d)
    rebuilt = np.einsum("am,mij->aij", meas.gm_coeffs, basis.matrices) / np.sqrt(2.0 * d)
    dev = float(np.max(np.abs(rebuilt - elems)))
    if dev > COEFF_ROUNDTRIP_TOL:
        raise ValidationError(f"coefficient round-trip deviates by {dev:.3e}")
    if meas.is_pvm:
        for a, m in enumerate(elems):
            dev = float(np.max(np.abs(m @ m - m)))
            if dev > PVM_TOL:
                raise ValidationError(f"element {a}: not idempotent (deviation {dev:.3e})")
        for a in range(len(elems)):
            for b in range(a + 1, len(elems)):
                dev = float(np.max(np.abs(elems[a] @ elems[b])))
                if dev > PVM_TOL:
                    raise ValidationError(
                        f"elements {a}, {b}: not orthogonal (deviation {dev:.3e})"
                    )


def bloch_pvm(nhat: np.ndarray) -> Measurement:
    """Dichotomic qubit PVM along the Bloch direction ``nhat`` (unit 3-vector).

    Outcome ``a`` has operator ``(I + (-1)^a nhat . sigma) / 2``.
    """
    nhat = np.asarray(nhat, dtype=np.float64)
    if nhat.shape != (3,):
        raise ShapeError(f"bloch_pvm: expected a 3-vector, got shape {nhat.shape}")
    if abs(np.linalg.norm(nhat) - 1.0) > 1e-10:
        raise ValidationError(f"bloch_pvm: direction must be unit norm, got {np.linalg.norm(nhat)}")
    ns = np.einsum("k,kij->ij", nhat, PAULI)
    elements = np.stack([(np.eye(2) + ns) / 2.0, (np.eye(2) - ns) / 2.0])
    return _measurement_from_elements(elements, is_pvm=True)


def pauli_triple() -> list[Measurement]:
    """The three Pauli measurements X, Y, Z; outcome 0 is the +1 eigenprojector."""
    return [bloch_pvm(e) for e in np.eye(3)]


def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform on the unit 2-sphere, shape (n, 3)."""
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def haar_unitary(d: int, rng: np.random.Generator, n: int = 1) -> Complex:
    """Stack of ``n`` Haar-random d x d unitaries (Ginibre + QR, phases fixed
    by the sign of R's diagonal)."""
    z = (rng.standard_normal((n, d, d)) + 1j * rng.standard_normal((n, d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.einsum("nii->ni", r)
    phases = diag / np.abs(diag)
    return q * phases[:, None, :]


def _qubit_pvm_elements(n: int, rng: np.random.Generator) -> Complex:
    nhat = sample_sphere(n, rng)
    ns = np.einsum("xk,kij->xij", nhat, PAULI)
    eye = np.eye(2)[None]
    return np.stack([(eye + ns) / 2.0, (eye - ns) / 2.0], axis=1)


def _qudit_pvm_elements(d: int, n: int, rng: np.random.Generator) -> Complex:
    u = haar_unitary(d, rng, n)
    # projector a is the outer product of column a with itself
    return np.einsum("nia,nja->naij", u, u.conj())


def _povm_elements(d: int, n_outcomes: int, n: int, rng: np.random.Generator) -> Complex:
    if not 2 <= n_outcomes <= d * d:
        raise ValidationError(
            f"povm outcome count must lie in [2, d^2] = [2, {d * d}], got {n_outcomes}"
        )
    w = (rng.standard_normal((n, n_outcomes, d, d))
         + 1j * rng.standard_normal((n, n_outcomes, d, d))) / np.sqrt(2.0)
    a = w @ np.conj(np.swapaxes(w, -1, -2))  # Wishart, PSD full rank a.s.
    s = a.sum(axis=1)
    evals, vecs = np.linalg.eigh(s)
    bad = evals[:, 0] < 1e-12
    while np.any(bad):  # probability-zero branch, resample defensively
        idx = np.flatnonzero(bad)
        w2 = (rng.standard_normal((len(idx), n_outcomes, d, d))
              + 1j * rng.standard_normal((len(idx), n_outcomes, d, d))) / np.sqrt(2.0)
        a[idx] = w2 @ np.conj(np.swapaxes(w2, -1, -2))
        s[idx] = a[idx].sum(axis=1)
        evals, vecs = np.linalg.eigh(s)
        bad = evals[:, 0] < 1e-12
    inv_sqrt = np.einsum("nik,nk,njk->nij", vecs, evals ** -0.5, vecs.conj())
    return np.einsum("nij,najk,nkl->nail", inv_sqrt, a, inv_sqrt)


def sample_qubit_pvm(rng: np.random.Generator) -> Measurement:
    """One dichotomic qubit PVM with its Bloch axis uniform on the sphere."""
    return _measurement_from_elements(_qubit_pvm_elements(1, rng)[0], is_pvm=True)


def sample_qudit_pvm(d: int, rng: np.random.Generator) -> Measurement:
    """One rank-1 projective measurement from a Haar-random basis of C^d."""
    if d < 2:
        raise ValidationError(f"qudit PVM needs d >= 2, got {d}")
    return _measurement_from_elements(_qudit_pvm_elements(d, 1, rng)[0], is_pvm=True)


def sample_povm(d: int, n_outcomes: int, rng: np.random.Generator) -> Measurement:
    """One random POVM: Wishart elements A_a whitened by S^(-1/2), S = sum A_a."""
    return _measurement_from_elements(_povm_elements(d, n_outcomes, 1, rng)[0], is_pvm=False)


@dataclass(frozen=True)
class MeasurementBatch:
    """Stacked measurements of one class, as consumed by the trainer."""

    mclass: MeasurementClass
    elements: Complex = field(repr=False)   # (n, O, d, d)
    gm_coeffs: np.ndarray = field(repr=False)  # (n, O, d^2)

    def __len__(self) -> int:
        return self.elements.shape[0]

    def __getitem__(self, i: int) -> Measurement:
        return Measurement(
            dim=self.mclass.d,
            elements=self.elements[i],
            gm_coeffs=self.gm_coeffs[i],
            is_pvm=self.mclass.is_projective,
        )


def sample_batch(mclass: MeasurementClass, n: int, rng: np.random.Generator) -> MeasurementBatch:
    """Sample ``n`` measurements of the given class in one vectorized draw.

    For ``pauli_triple`` the batch is the fixed X, Y, Z triple (``n`` is
    ignored); no randomness is consumed.
    """
    if mclass.kind == "pauli_triple":
        triple = pauli_triple()
        elements = np.stack([m.elements for m in triple])
        coeffs = np.stack([m.gm_coeffs for m in triple])
        return MeasurementBatch(mclass=mclass, elements=elements, gm_coeffs=coeffs)
    if n < 1:
        raise ValidationError(f"batch size must be >= 1, got {n}")
    if mclass.kind == "qubit_pvm":
        elements = _qubit_pvm_elements(n, rng)
    elif mclass.kind == "qudit_pvm":
        elements = _qudit_pvm_elements(mclass.d, n, rng)
    else:
        elements = _povm_elements(mclass.d, mclass.n_outcomes, n, rng)
    coeffs = coeff_batch(elements, gellmann_basis(mclass.d))
    return MeasurementBatch(mclass=mclass, elements=elements, gm_coeffs=coeffs)
