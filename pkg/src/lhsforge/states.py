"""Target bipartite states: Werner, qutrit isotropic, and custom loading.

Both built-in families interpolate between a maximally entangled state at
``v = 1`` and white noise at ``v = 0``; their reduced states are maximally
mixed for every ``v``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ValidationError
from .quantum_core import Complex, validate_density_matrix

MAX_CUSTOM_DIM = 4  # basis-function count explodes beyond this; reject early

# Known visibility landmarks for the built-in families.
WERNER_SEPARABLE_MAX = 1.0 / 3.0
WERNER_PAULI_TRIPLE_THRESHOLD = 1.0 / np.sqrt(3.0)
WERNER_PVM_THRESHOLD = 0.5
WERNER_POVM_THRESHOLD = 0.5
ISOTROPIC3_ENTANGLED_MIN = 0.25
ISOTROPIC3_PVM_THRESHOLD = 5.0 / 12.0


@dataclass(frozen=True)
class VisibilityState:
    """A bipartite density matrix tagged with its visibility parameter."""

    family: str  # "werner2" | "isotropic3" | "custom"
    v: float
    rho: Complex = field(repr=False)
    dim_a: int
    dim_b: int


def _check_visibility(v: float) -> float:
    v = float(v)
    if not 0.0 <= v <= 1.0:
        raise ValidationError(f"visibility v = {v!r} outside [0, 1]")
    return v


def werner(v: float) -> VisibilityState:
    """Two-qubit Werner state ``v |psi-><psi-| + (1 - v)/4 * I``."""
    v = _check_visibility(v)
    psi = np.zeros(4, dtype=np.complex128)
    psi[1] = 1.0 / np.sqrt(2.0)   # |01>
    psi[2] = -1.0 / np.sqrt(2.0)  # |10>
    rho = v * np.outer(psi, psi.conj()) + (1.0 - v) / 4.0 * np.eye(4)
    rho.setflags(write=False)
    return VisibilityState(family="werner2", v=v, rho=rho, dim_a=2, dim_b=2)


def isotropic3(v: float) -> VisibilityState:
    """Two-qutrit isotropic state ``v |psi+><psi+| + (1 - v)/9 * I``."""
    v = _check_visibility(v)
    psi = np.zeros(9, dtype=np.complex128)
    psi[[0, 4, 8]] = 1.0 / np.sqrt(3.0)  # (|00> + |11> + |22>)/sqrt(3)
    rho = v * np.outer(psi, psi.conj()) + (1.0 - v) / 9.0 * np.eye(9)
    rho.setflags(write=False)
    return VisibilityState(family="isotropic3", v=v, rho=rho, dim_a=3, dim_b=3)


def save_state(state: VisibilityState, path: str | Path) -> None:
    """Serialize a state to the JSON document format read by ``load_state``."""
    doc = {
        "dim_a": state.dim_a,
        "dim_b": state.dim_b,
        "v": state.v,
        "matrix_re": state.rho.real.tolist(),
        "matrix_im": state.rho.imag.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_state(source: str | Path | dict) -> VisibilityState:
    """Load and validate a custom bipartite state.

    ``source`` is a path to (or an already-parsed dict of) a JSON document
    with fields ``dim_a``, ``dim_b``, ``matrix_re`` and ``matrix_im`` (both
    row-major nested lists) and optionally ``v``.  Rejects documents whose
    matrix violates any density-matrix invariant, naming the violation.
    """
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(Path(source).read_text())
    try:
        dim_a = int(doc["dim_a"])
        dim_b = int(doc["dim_b"])
        re = np.asarray(doc["matrix_re"], dtype=np.float64)
        im = np.asarray(doc["matrix_im"], dtype=np.float64)
    except KeyError as exc:
        raise ValidationError(f"state document missing field {exc.args[0]!r}") from None
    if dim_a < 2 or dim_b < 2:
        raise ValidationError(f"state document: dims ({dim_a}, {dim_b}) must be >= 2")
    if dim_a > MAX_CUSTOM_DIM or dim_b > MAX_CUSTOM_DIM:
        raise CapacityError(
            f"custom states support dims <= {MAX_CUSTOM_DIM}, got ({dim_a}, {dim_b})"
        )
    n = dim_a * dim_b
    if re.shape != (n, n) or im.shape != (n, n):
        raise ValidationError(
            f"state document: matrix shape {re.shape} does not match dims "
            f"({dim_a} * {dim_b} = {n})"
        )
    rho = validate_density_matrix(re + 1j * im, normalized=True, name="custom state")
    v = float(doc.get("v", 1.0))
    rho = rho.copy()
    rho.setflags(write=False)
    return VisibilityState(family="custom", v=_check_visibility(v), rho=rho,
                           dim_a=dim_a, dim_b=dim_b)
