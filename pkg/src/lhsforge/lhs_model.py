"""The trainable local-hidden-state model.

A model holds ``n_hidden`` hidden variables, each a pair of

* a response-rule coefficient matrix (rows of feature weights, one per
  outcome in the general mode, a single outcome-0 row in the dichotomic
  mode) plus a per-outcome bias used only in the general mode, and
* an unconstrained complex matrix ``M`` mapped to a hidden state through
  ``sigma = M M^dag / tr[M M^dag]``, which keeps positivity and unit trace
  valid at every optimization step.

Hidden variables are mixed with uniform weight ``1 / n_hidden``.  The model
assemblage for a measurement with outcome coefficient vectors ``g^a`` is

    sigma_a = (1 / n_hidden) * sum_h p(a | g, h) sigma_h,

with ``p(0|.) = sigmoid(<B(g^0), c_h>)`` in the dichotomic mode (features are
odd, so outcome probabilities obey p(0|-g) = 1 - p(0|g)) and a softmax over
``<B(g^a), c_h^a> + bias_h^a`` in the general mode.

Parameters are ``float64`` torch tensors; the public single-measurement
operations run in numpy and agree with the differentiable torch path used by
the trainer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CapacityError, DegenerateParameterError, ValidationError
from .measurements import Measurement
from .quantum_core import NORM_FLOOR, Complex
from .response_basis import FeatureMap, evaluate, monomial_map, odd_harmonic_map

SIGMOID_DICHOTOMIC = "sigmoid_dichotomic"
SOFTMAX_GENERAL = "softmax_general"
MODES = (SIGMOID_DICHOTOMIC, SOFTMAX_GENERAL)

INIT_SCALE = 0.1  # stddev of coefficient and M-perturbation initialization


@dataclass(frozen=True)
class ModelConfig:
    n_hidden: int
    order: int      # polynomial order D of the feature map
    d_b: int        # trusted-side (hidden state) dimension
    o_max: int      # outcome capacity
    mode: str
    seed: int
    d_a: int = 0    # measurement-side dimension; 0 means same as d_b

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown response mode {self.mode!r}; pick from {MODES}")
        for name in ("n_hidden", "order", "d_b", "o_max"):
            if getattr(self, name) < 1:
                raise ValidationError(f"ModelConfig.{name} must be positive")
        if self.d_a == 0:
            object.__setattr__(self, "d_a", self.d_b)
        if self.mode == SIGMOID_DICHOTOMIC:
            if self.d_a != 2 or self.o_max != 2:
                raise ValidationError("dichotomic mode requires d_a = 2 and o_max = 2")


@dataclass
class HiddenVariable:
    """Response-rule parameters of one hidden variable."""

    coeffs: np.ndarray  # (rows, n_features); rows = 1 (dichotomic) or o_max
    bias: np.ndarray    # (rows,)


@dataclass
class HiddenStateParam:
    """Unconstrained matrix behind one reparameterized hidden state."""

    m: Complex  # (d_b, d_b)


def _feature_map_for(cfg: ModelConfig) -> FeatureMap:
    if cfg.mode == SIGMOID_DICHOTOMIC:
        return odd_harmonic_map(cfg.order)
    return monomial_map(cfg.order, cfg.d_a * cfg.d_a)


class LhsModel:
    """Stacked parameters of all hidden variables of one LHS model."""

    def __init__(self, cfg: ModelConfig, coeffs: torch.Tensor, bias: torch.Tensor,
                 m: torch.Tensor):
        self.cfg = cfg
        self.feature_map = _feature_map_for(cfg)
        self.coeffs = coeffs  # (H, rows, N) float64
        self.bias = bias      # (H, rows)  float64
        self.m = m            # (H, 2, d_b, d_b) float64, [:, 0] real / [:, 1] imag parts

    @property
    def n_hidden(self) -> int:
        return self.cfg.n_hidden

    @property
    def rule_rows(self) -> int:
        return self.coeffs.shape[1]

    def parameters(self) -> list[torch.Tensor]:
        return [self.coeffs, self.bias, self.m]

    def hidden_variable(self, i: int) -> HiddenVariable:
        return HiddenVariable(coeffs=self.coeffs[i].detach().numpy().copy(),
                              bias=self.bias[i].detach().numpy().copy())

    def hidden_state_param(self, i: int) -> HiddenStateParam:
        m = self.m[i].detach().numpy()
        return HiddenStateParam(m=(m[0] + 1j * m[1]).copy())

    def hidden_states(self) -> Complex:
        """All hidden states sigma_h, shape (n_hidden, d_b, d_b)."""
        return _sigma_from_m(self.m).detach().numpy()

    def marginal(self) -> Complex:
        """The model's no-signaling marginal: the uniform mixture of sigma_h."""
        return self.hidden_states().mean(axis=0)

    def clone(self) -> "LhsModel":
        return LhsModel(self.cfg, self.coeffs.detach().clone(),
                        self.bias.detach().clone(), self.m.detach().clone())


def init_model(cfg: ModelConfig) -> LhsModel:
    """Build a model with small random response rules and near-identity M.

    Coefficients are Normal(0, 0.1^2), biases zero, and each M starts from the
    identity plus Normal(0, 0.1^2) complex noise, so every initial hidden
    state is a valid density matrix.  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(cfg.seed)
    fm = _feature_map_for(cfg)
    rows = 1 if cfg.mode == SIGMOID_DICHOTOMIC else cfg.o_max
    coeffs = rng.normal(0.0, INIT_SCALE, size=(cfg.n_hidden, rows, fm.n_features))
    bias = np.zeros((cfg.n_hidden, rows))
    m = rng.normal(0.0, INIT_SCALE, size=(cfg.n_hidden, 2, cfg.d_b, cfg.d_b))
    m[:, 0] += np.eye(cfg.d_b)
    return LhsModel(cfg,
                    torch.from_numpy(coeffs),
                    torch.from_numpy(bias),
                    torch.from_numpy(m))


def reinit_hidden_pair(model: LhsModel, i: int, rng: np.random.Generator) -> None:
    """Redraw hidden pair ``i`` in place (used when a state degenerates)."""
    with torch.no_grad():
        model.coeffs[i] = torch.from_numpy(
            rng.normal(0.0, INIT_SCALE, size=tuple(model.coeffs.shape[1:])))
        model.bias[i] = 0.0
        fresh = rng.normal(0.0, INIT_SCALE, size=tuple(model.m.shape[1:]))
        fresh[0] += np.eye(model.cfg.d_b)
        model.m[i] = torch.from_numpy(fresh)


# ---------------------------------------------------------------------------
# differentiable forward path (torch)
# ---------------------------------------------------------------------------

def _sigma_from_m(m: torch.Tensor) -> torch.Tensor:
    """Map (H, 2, d, d) real parameters to (H, d, d) density matrices."""
    mc = torch.complex(m[:, 0], m[:, 1])
    rho = mc @ mc.conj().transpose(-1, -2)
    tr = torch.einsum("hii->h", rho).real
    return rho / tr[:, None, None].to(rho.dtype)


def _probs_dichotomic(coeffs: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """(B, H) outcome-0 probabilities from (B, N) features."""
    return torch.sigmoid(features @ coeffs[:, 0, :].T)


def _probs_softmax(coeffs: torch.Tensor, bias: torch.Tensor, features: torch.Tensor,
                   mask: torch.Tensor | None) -> torch.Tensor:
    """(B, H, O) response probabilities from (B, O, N) per-outcome features."""
    logits = torch.einsum("bon,hon->bho", features, coeffs) + bias[None]
    if mask is not None:
        logits = logits.masked_fill(~mask[:, None, :], float("-inf"))
    return torch.softmax(logits, dim=-1)


def forward_assemblage(model: LhsModel, features: torch.Tensor,
                       mask: torch.Tensor | None = None) -> torch.Tensor:
    """Model assemblage for a feature batch: (B, o_max, d_b, d_b) complex.

    ``features`` is (B, N) in dichotomic mode and (B, o_max, N) in general
    mode; ``mask`` flags valid outcomes of padded batches.
    """
    sigma = _sigma_from_m(model.m)
    h = model.cfg.n_hidden
    if model.cfg.mode == SIGMOID_DICHOTOMIC:
        p0 = _probs_dichotomic(model.coeffs, features).to(sigma.dtype)
        s0 = torch.einsum("bh,hij->bij", p0, sigma) / h
        s1 = sigma.mean(dim=0)[None] - s0
        return torch.stack([s0, s1], dim=1)
    probs = _probs_softmax(model.coeffs, model.bias, features, mask).to(sigma.dtype)
    return torch.einsum("bho,hij->boij", probs, sigma) / h


def abs_eigvals_sum(delta: torch.Tensor, smoothing: float) -> torch.Tensor:
    """Sum over eigenvalues of sqrt(lambda^2 + smoothing) for Hermitian delta.

    ``delta`` is (..., d, d); 2 x 2 blocks use the closed-form spectrum, the
    general case falls back to a Hermitian eigensolver.  ``smoothing`` keeps
    the map differentiable where eigenvalues cross zero.
    """
    d = delta.shape[-1]
    if d == 2:
        a = delta[..., 0, 0].real
        c = delta[..., 1, 1].real
        b = delta[..., 0, 1]
        # eigenvalues (t +/- s) / 2; smooth the discriminant too so gradients
        # stay finite when the two eigenvalues collide
        t = a + c
        s = torch.sqrt((a - c) ** 2 + 4.0 * (b.real ** 2 + b.imag ** 2) + smoothing)
        lo = (t - s) / 2.0
        hi = (t + s) / 2.0
        return torch.sqrt(lo * lo + smoothing) + torch.sqrt(hi * hi + smoothing)
    eigs = torch.linalg.eigvalsh(delta)
    return torch.sqrt(eigs * eigs + smoothing).sum(dim=-1)


def assemblage_deviation(model_assemblage: torch.Tensor, targets: torch.Tensor,
                         mask: torch.Tensor | None, smoothing: float) -> torch.Tensor:
    """Per-measurement assemblage distance, (B,) real tensor."""
    dist = 0.5 * abs_eigvals_sum(model_assemblage - targets, smoothing)
    if mask is not None:
        dist = dist * mask.to(dist.dtype)
    return dist.sum(dim=1)


# ---------------------------------------------------------------------------
# public single-measurement operations (numpy)
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def measurement_features(fm: FeatureMap, mode: str, gm_coeffs: np.ndarray) -> np.ndarray:
    """Feature tensor for one or many measurements.

    ``gm_coeffs`` has shape (..., O, d^2).  Dichotomic mode consumes the
    traceless Bloch part of outcome 0 and returns (..., N); general mode
    evaluates features per outcome and returns (..., O, N).
    """
    gm_coeffs = np.asarray(gm_coeffs, dtype=np.float64)
    if mode == SIGMOID_DICHOTOMIC:
        if gm_coeffs.shape[-1] != 4:
            raise ValidationError("dichotomic mode expects qubit coefficient vectors")
        return evaluate(fm, gm_coeffs[..., 0, 1:4])
    return evaluate(fm, gm_coeffs)


def response_probs(hv: HiddenVariable, meas: Measurement, fm: FeatureMap,
                   mode: str) -> np.ndarray:
    """Outcome probabilities of one hidden variable for one measurement."""
    if mode not in MODES:
        raise ValidationError(f"unknown response mode {mode!r}")
    n_out = meas.n_outcomes
    if mode == SIGMOID_DICHOTOMIC:
        if n_out != 2:
            raise CapacityError(f"dichotomic rule cannot serve {n_out} outcomes")
        feats = measurement_features(fm, mode, meas.gm_coeffs)
        p0 = float(_sigmoid(feats @ hv.coeffs[0]))
        return np.array([p0, 1.0 - p0])
    if n_out > hv.coeffs.shape[0]:
        raise CapacityError(
            f"measurement has {n_out} outcomes but the rule holds {hv.coeffs.shape[0]} rows"
        )
    feats = measurement_features(fm, mode, meas.gm_coeffs)
    logits = np.einsum("on,on->o", feats, hv.coeffs[:n_out]) + hv.bias[:n_out]
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def hidden_state(param: HiddenStateParam) -> Complex:
    """The density matrix ``M M^dag / tr[M M^dag]`` of one hidden pair."""
    m = np.asarray(param.m, dtype=np.complex128)
    rho = m @ m.conj().T
    tr = float(np.trace(rho).real)
    if tr <= NORM_FLOOR:
        raise DegenerateParameterError(
            f"hidden state parameter has vanishing normalization (tr = {tr:.3e})"
        )
    return rho / tr


def lhs_assemblage(model: LhsModel, meas: Measurement) -> Complex:
    """Model assemblage for one measurement, shape (O, d_b, d_b)."""
    n_out = meas.n_outcomes
    if model.cfg.mode == SOFTMAX_GENERAL and n_out > model.cfg.o_max:
        raise CapacityError(
            f"measurement has {n_out} outcomes, model capacity is {model.cfg.o_max}"
        )
    sigma = _sigma_from_m(model.m).numpy()
    feats = measurement_features(model.feature_map, model.cfg.mode, meas.gm_coeffs)
    if model.cfg.mode == SIGMOID_DICHOTOMIC:
        if n_out != 2:
            raise CapacityError(f"dichotomic model cannot serve {n_out} outcomes")
        coeffs = model.coeffs.numpy()[:, 0, :]
        p0 = _sigmoid(coeffs @ feats)  # (H,)
        s0 = np.einsum("h,hij->ij", p0, sigma) / model.n_hidden
        return np.stack([s0, sigma.mean(axis=0) - s0])
    coeffs = model.coeffs.numpy()[:, :n_out, :]
    bias = model.bias.numpy()[:, :n_out]
    logits = np.einsum("on,hon->ho", feats, coeffs) + bias
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    probs = w / w.sum(axis=1, keepdims=True)  # (H, O)
    return np.einsum("ho,hij->oij", probs, sigma) / model.n_hidden


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(model: LhsModel, path: str | Path,
                    rng_state: dict | None = None) -> None:
    """Dump all parameters, the model config and an optional RNG state.

    The round trip through ``load_checkpoint`` is bit-exact.
    """
    meta = {
        "config": {
            "n_hidden": model.cfg.n_hidden, "order": model.cfg.order,
            "d_b": model.cfg.d_b, "o_max": model.cfg.o_max,
            "mode": model.cfg.mode, "seed": model.cfg.seed, "d_a": model.cfg.d_a,
        },
        "feature_map": {
            "kind": model.feature_map.kind, "order": model.feature_map.order,
            "input_dim": model.feature_map.input_dim,
            "n_features": model.feature_map.n_features,
        },
        "rng_state": rng_state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path,
             coeffs=model.coeffs.detach().numpy(),
             bias=model.bias.detach().numpy(),
             m=model.m.detach().numpy(),
             meta=np.array(json.dumps(meta)))


def load_checkpoint(path: str | Path) -> tuple[LhsModel, dict | None]:
    p = Path(path)
    if not p.exists():  # np.savez appends .npz to extension-less paths
        p = Path(f"{path}.npz")
    with np.load(p, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        cfg = ModelConfig(**meta["config"])
        model = LhsModel(cfg,
                         torch.from_numpy(data["coeffs"].copy()),
                         torch.from_numpy(data["bias"].copy()),
                         torch.from_numpy(data["m"].copy()))
    return model, meta["rng_state"]
