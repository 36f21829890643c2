"""Stochastic gradient-descent construction of LHS models.

Each step samples a fresh batch of measurements, evaluates the mean
assemblage distance between the model and the quantum targets, and updates
all hidden-variable parameters from reverse-mode gradients.  The optimized
objective smooths eigenvalue absolute values as ``sqrt(x^2 + eps)``; reported
train/test losses are evaluated with the exact trace distance.

A run ends with a held-out evaluation on freshly sampled measurements
(independent seed).  A final test loss at or below the configured tolerance
certifies that an LHS model was found at this capacity; the converse is not
a steerability proof.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import TrainingAbort, ValidationError
from .lhs_model import (
    SIGMOID_DICHOTOMIC,
    SOFTMAX_GENERAL,
    LhsModel,
    ModelConfig,
    assemblage_deviation,
    forward_assemblage,
    init_model,
    measurement_features,
    reinit_hidden_pair,
    save_checkpoint,
)
from .measurements import Measurement, MeasurementBatch, MeasurementClass, sample_batch
from .quantum_core import EIG_SMOOTHING, NORM_FLOOR, assemblage_batch
from .states import VisibilityState

LHS_FOUND = "LhsFound"
NOT_CONVERGED = "NotConverged"

DIVERGENCE_FACTOR = 10.0  # loss above this multiple of its start halves the lr
EVAL_CHUNK = 4096


def mode_for_class(mclass: MeasurementClass) -> str:
    if mclass.kind in ("pauli_triple", "qubit_pvm"):
        return SIGMOID_DICHOTOMIC
    return SOFTMAX_GENERAL


def outcome_capacity(mclass: MeasurementClass) -> int:
    if mclass.kind in ("pauli_triple", "qubit_pvm"):
        return 2
    if mclass.kind == "qudit_pvm":
        return mclass.d
    return mclass.d * mclass.d  # povm capacity: the extremal maximum


@dataclass(frozen=True)
class TrainConfig:
    measurement_class: MeasurementClass
    n_steps: int = 20_000
    n_meas_per_step: int = 512
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "gd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_tolerance: float = 1e-3
    test_set_size: int = 0  # 0: 10^4 for qubit measurements, 10^3 above
    seed: int = 0
    n_hidden: int = 8
    order: int = 5
    cosine_decay: bool = True
    checkpoint_every: int = 1000
    log_path: str | None = None
    log_every: int = 500
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.test_set_size == 0:
            size = 10_000 if self.measurement_class.d == 2 else 1_000
            object.__setattr__(self, "test_set_size", size)
        for name in ("n_steps", "n_meas_per_step", "test_set_size", "n_hidden", "order",
                     "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"TrainConfig.{name} must be positive")
        if self.learning_rate <= 0 or self.loss_tolerance <= 0:
            raise ValidationError("learning_rate and loss_tolerance must be positive")
        if self.optimizer not in ("adam", "gd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    final_train_loss: float
    final_test_loss: float
    loss_history: np.ndarray = field(repr=False)  # (n, 2): step, smoothed batch loss
    verdict: str = NOT_CONVERGED
    wall_time_s: float = 0.0
    steps_run: int = 0
    lr_halvings: int = 0
    hidden_reinits: int = 0

    def as_dict(self) -> dict:
        d = self.__dict__.copy()
        d["loss_history"] = np.asarray(self.loss_history).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        d = json.loads(text)
        d["loss_history"] = np.asarray(d["loss_history"], dtype=np.float64)
        return cls(**d)


def model_config_for(state: VisibilityState, cfg: TrainConfig) -> ModelConfig:
    mclass = cfg.measurement_class
    if state.dim_a != mclass.d:
        raise ValidationError(
            f"state has Alice dimension {state.dim_a} but measurements act on d = {mclass.d}"
        )
    return ModelConfig(
        n_hidden=cfg.n_hidden, order=cfg.order, d_b=state.dim_b,
        o_max=outcome_capacity(mclass), mode=mode_for_class(mclass),
        seed=cfg.seed, d_a=mclass.d,
    )


def _stack_measurements(batch) -> tuple[np.ndarray, np.ndarray]:
    """Elements and coefficient stacks from a MeasurementBatch or list."""
    if isinstance(batch, MeasurementBatch):
        if len(batch) == 0:
            raise ValidationError("empty measurement batch")
        return batch.elements, batch.gm_coeffs
    if isinstance(batch, Measurement):
        batch = [batch]
    if len(batch) == 0:
        raise ValidationError("empty measurement batch")
    elements = np.stack([m.elements for m in batch])
    coeffs = np.stack([m.gm_coeffs for m in batch])
    return elements, coeffs


def _prepare_batch(model: LhsModel, rho: np.ndarray, elements: np.ndarray,
                   gm_coeffs: np.ndarray):
    """Features, padded targets and mask tensors for one measurement batch."""
    targets = assemblage_batch(rho, elements)
    feats = measurement_features(model.feature_map, model.cfg.mode, gm_coeffs)
    mask_t = None
    if model.cfg.mode == SOFTMAX_GENERAL:
        n_batch, n_out = targets.shape[:2]
        o_max = model.cfg.o_max
        if n_out > o_max:
            raise ValidationError(
                f"batch has {n_out} outcomes, model capacity is {o_max}"
            )
        if n_out < o_max:
            pad = o_max - n_out
            targets = np.pad(targets, ((0, 0), (0, pad), (0, 0), (0, 0)))
            feats = np.pad(feats, ((0, 0), (0, pad), (0, 0)))
            mask = np.zeros((n_batch, o_max), dtype=bool)
            mask[:, :n_out] = True
            mask_t = torch.from_numpy(mask)
    return torch.from_numpy(feats), torch.from_numpy(targets), mask_t


def _smoothed_loss(model: LhsModel, features: torch.Tensor, targets: torch.Tensor,
                   mask: torch.Tensor | None) -> torch.Tensor:
    assm = forward_assemblage(model, features, mask)
    return assemblage_deviation(assm, targets, mask, EIG_SMOOTHING).mean()


def _exact_loss(model: LhsModel, rho: np.ndarray, elements: np.ndarray,
                gm_coeffs: np.ndarray) -> float:
    """Mean exact assemblage distance over a measurement stack (no smoothing)."""
    total = 0.0
    n = elements.shape[0]
    for lo in range(0, n, EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, n)
        feats, targets, mask = _prepare_batch(model, rho, elements[lo:hi],
                                              gm_coeffs[lo:hi])
        with torch.no_grad():
            assm = forward_assemblage(model, feats, mask)
            delta = (assm - targets).numpy()
        eigs = np.linalg.eigvalsh(delta)
        dist = 0.5 * np.abs(eigs).sum(axis=-1)
        if mask is not None:
            dist = dist * mask.numpy()
        total += float(dist.sum(axis=1).sum())
    return total / n


def batch_loss(model: LhsModel, state: VisibilityState, batch) -> float:
    """Mean assemblage distance between model and quantum assemblages.

    ``batch`` is a MeasurementBatch or a nonempty sequence of Measurements.
    Uses the exact trace distance (the training objective differs only by the
    eigenvalue smoothing term).
    """
    elements, gm_coeffs = _stack_measurements(batch)
    if elements.shape[0] == 0:
        raise ValidationError("batch_loss: empty measurement batch")
    return _exact_loss(model, state.rho, elements, gm_coeffs)


def compute_gradients(model: LhsModel, state: VisibilityState, batch) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the smoothed batch loss for every parameter.

    Returns arrays keyed ``coeffs`` (H, rows, N), ``bias`` (H, rows) and
    ``m`` (H, 2, d_b, d_b); the two leading planes of ``m`` are the real and
    imaginary parts.  Raises TrainingAbort on non-finite gradients.
    """
    elements, gm_coeffs = _stack_measurements(batch)
    feats, targets, mask = _prepare_batch(model, state.rho, elements, gm_coeffs)
    params = {"coeffs": model.coeffs, "bias": model.bias, "m": model.m}
    for p in params.values():
        p.requires_grad_(True)
        p.grad = None
    try:
        loss = _smoothed_loss(model, feats, targets, mask)
        loss.backward()
        grads = {}
        for name, p in params.items():
            g = torch.zeros_like(p) if p.grad is None else p.grad
            if not bool(torch.isfinite(g).all()):
                raise TrainingAbort(f"non-finite gradient in parameter block '{name}'")
            grads[name] = g.detach().numpy().copy()
    finally:
        for p in params.values():
            p.requires_grad_(False)
            p.grad = None
    return grads


def _sample_test_stack(mclass: MeasurementClass, n: int, seed: int):
    rng = np.random.default_rng(seed)
    batch = sample_batch(mclass, n, rng)
    return batch.elements, batch.gm_coeffs


def evaluate_on_fresh(model: LhsModel, state: VisibilityState, mclass: MeasurementClass,
                      n: int, seed: int) -> float:
    """Exact loss on ``n`` freshly sampled measurements from the given seed."""
    elements, gm_coeffs = _sample_test_stack(mclass, n, seed)
    return _exact_loss(model, state.rho, elements, gm_coeffs)


class _Snapshot:
    """Parameter + optimizer state used by the divergence guard."""

    def __init__(self, model: LhsModel, opt: torch.optim.Optimizer):
        self.params = [p.detach().clone() for p in model.parameters()]
        self.opt_state = copy.deepcopy(opt.state_dict())

    def restore(self, model: LhsModel, opt: torch.optim.Optimizer) -> None:
        with torch.no_grad():
            for p, saved in zip(model.parameters(), self.params):
                p.copy_(saved)
        opt.load_state_dict(copy.deepcopy(self.opt_state))


def train(state: VisibilityState, cfg: TrainConfig) -> tuple[LhsModel, TrainReport]:
    """Run the full sample-evaluate-update loop and a held-out evaluation.

    Deterministic for a fixed config on a fixed build: all measurement
    randomness flows from ``cfg.seed`` and the held-out set from
    ``cfg.seed + 1``.
    """
    t0 = time.perf_counter()
    mclass = cfg.measurement_class
    model = init_model(model_config_for(state, cfg))
    rng = np.random.default_rng(cfg.seed)
    rho = state.rho

    params = model.parameters()
    for p in params:
        p.requires_grad_(True)
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=cfg.learning_rate,
                               betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    else:
        opt = torch.optim.SGD(params, lr=cfg.learning_rate)

    fixed_batch = None
    if mclass.kind == "pauli_triple":
        batch = sample_batch(mclass, 3, rng)
        fixed_batch = _prepare_batch(model, rho, batch.elements, batch.gm_coeffs)

    log_file = open(cfg.log_path, "a") if cfg.log_path else None
    history = np.empty((cfg.n_steps, 2))
    lr_scale = 1.0
    halvings = 0
    reinits = 0
    initial_loss = None
    snapshot = _Snapshot(model, opt)
    try:
        for step in range(cfg.n_steps):
            lr = cfg.learning_rate * lr_scale
            if cfg.cosine_decay:
                lr *= 0.5 * (1.0 + math.cos(math.pi * step / cfg.n_steps))
            for group in opt.param_groups:
                group["lr"] = lr

            if fixed_batch is not None:
                feats, targets, mask = fixed_batch
            else:
                batch = sample_batch(mclass, cfg.n_meas_per_step, rng)
                feats, targets, mask = _prepare_batch(model, rho, batch.elements,
                                                      batch.gm_coeffs)
            opt.zero_grad(set_to_none=True)
            loss = _smoothed_loss(model, feats, targets, mask)
            loss_val = float(loss.detach())
            if not math.isfinite(loss_val):
                raise TrainingAbort(f"non-finite loss at step {step}")
            loss.backward()
            for name, p in zip(("coeffs", "bias", "m"), params):
                if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                    raise TrainingAbort(
                        f"non-finite gradient at step {step} in parameter block '{name}'"
                    )
            opt.step()
            history[step] = (step, loss_val)

            if initial_loss is None:
                initial_loss = loss_val
            elif loss_val > DIVERGENCE_FACTOR * max(initial_loss, 1e-12):
                lr_scale *= 0.5
                halvings += 1
                snapshot.restore(model, opt)
                continue

            with torch.no_grad():
                mc = torch.complex(model.m[:, 0], model.m[:, 1])
                norms = torch.einsum("hij,hij->h", mc, mc.conj()).real
                for i in torch.nonzero(norms <= NORM_FLOOR).flatten().tolist():
                    reinit_hidden_pair(model, i, rng)
                    reinits += 1

            if (step + 1) % cfg.checkpoint_every == 0:
                snapshot = _Snapshot(model, opt)
                if cfg.checkpoint_path:
                    save_checkpoint(model, cfg.checkpoint_path,
                                    rng_state=rng.bit_generator.state)
            if log_file and cfg.log_every and step % cfg.log_every == 0:
                log_file.write(
                    f"step={step} train_loss={loss_val:.6e} lr={lr:.3e} "
                    f"wall_time={time.perf_counter() - t0:.2f}\n"
                )
    finally:
        if log_file:
            log_file.close()
        for p in params:
            p.requires_grad_(False)
            p.grad = None

    if mclass.kind == "pauli_triple":
        triple = sample_batch(mclass, 3, rng)
        final_train = _exact_loss(model, rho, triple.elements, triple.gm_coeffs)
        final_test = final_train
    else:
        fresh = sample_batch(mclass, cfg.n_meas_per_step, rng)
        final_train = _exact_loss(model, rho, fresh.elements, fresh.gm_coeffs)
        final_test = evaluate_on_fresh(model, state, mclass, cfg.test_set_size,
                                       cfg.seed + 1)

    report = TrainReport(
        final_train_loss=final_train,
        final_test_loss=final_test,
        loss_history=history,
        verdict=LHS_FOUND if final_test <= cfg.loss_tolerance else NOT_CONVERGED,
        wall_time_s=time.perf_counter() - t0,
        steps_run=cfg.n_steps,
        lr_halvings=halvings,
        hidden_reinits=reinits,
    )
    return model, report


def certify(state: VisibilityState, cfg: TrainConfig) -> tuple[str, TrainReport]:
    """Train and report.  ``LhsFound`` means no steering was detected at this
    model capacity and tolerance (one-sided); ``NotConverged`` means no LHS
    model was found, which is not a proof of steerability."""
    _, report = train(state, cfg)
    return report.verdict, report
