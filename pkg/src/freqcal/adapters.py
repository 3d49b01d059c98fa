"""Trainable test-time calibration modules and their exact gradients.

Two module families, both gated residual corrections around a frozen
forecaster:

* frequency-domain gated calibration ("fac"): rFFT -> elementwise complex
  affine mask -> irFFT -> tanh-gated residual. Parameters per module:
  complex mask W [F x C], complex shift B [F x C], per-channel gate
  pre-activation alpha [C]; 4*C*F + C real parameters with F = len//2 + 1.
* dense temporal gated calibration ("temporal_gcm"): per-channel dense
  [len x len] map plus bias with a per-channel gate; C*(len^2 + len + 1)
  real parameters. This is the quadratic-scaling baseline.

Complex parameters are stored as complex arrays but differentiated in the
(re, im) real-pair sense, so every gradient here is checkable against
elementwise finite differences. The forecaster is frozen: backward routes
through its VJP but never produces gradients for its weights.

With mask = shift = 0 a module is exactly the identity for any gate value,
because the correction is irfft(0) = 0. Training starts from that identity
but with a nonzero gate pre-activation: at gate = 0 the mask and shift
gradients all carry a tanh(0) = 0 factor, which is an exact stationary
point that Adam can never leave.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .forecasters import ForecasterModel
from .spectral import irfft, n_bins, rfft, rfft_adjoint, rfft_vjp

__all__ = [
    "ADAPTER_KINDS",
    "DEFAULT_GATE_INIT",
    "FreqGcmParams",
    "TemporalGcmParams",
    "AdapterConfig",
    "AdapterState",
    "ForwardTape",
    "calibrate",
    "adapter_forward",
    "adapter_backward",
    "param_count",
    "save_adapter",
    "load_adapter",
]

ADAPTER_KINDS = ("fac", "temporal_gcm")
DEFAULT_GATE_INIT = 1.0
FORMAT_VERSION = 1


@dataclass
class FreqGcmParams:
    """One frequency-domain gated calibration module for signals of ``length``."""

    mask: np.ndarray   # complex [F x C], multiplicative
    shift: np.ndarray  # complex [F x C], additive
    gate: np.ndarray   # real [C], pre-activation
    length: int

    @classmethod
    def initial(cls, length: int, n_channels: int, gate_init: float = DEFAULT_GATE_INIT):
        bins = n_bins(length)
        return cls(
            mask=np.zeros((bins, n_channels), dtype=np.complex128),
            shift=np.zeros((bins, n_channels), dtype=np.complex128),
            gate=np.full(n_channels, float(gate_init)),
            length=length,
        )

    @property
    def n_channels(self) -> int:
        return self.mask.shape[1]

    def param_count(self) -> int:
        return 4 * self.n_channels * n_bins(self.length) + self.n_channels

    def arrays(self) -> dict[str, np.ndarray]:
        return {"mask": self.mask, "shift": self.shift, "gate": self.gate}


@dataclass
class TemporalGcmParams:
    """Dense per-channel temporal calibration module (quadratic baseline)."""

    weight: np.ndarray  # real [C x len x len]
    bias: np.ndarray    # real [C x len]
    gate: np.ndarray    # real [C], pre-activation
    length: int

    @classmethod
    def initial(cls, length: int, n_channels: int, gate_init: float = DEFAULT_GATE_INIT):
        return cls(
            weight=np.zeros((n_channels, length, length)),
            bias=np.zeros((n_channels, length)),
            gate=np.full(n_channels, float(gate_init)),
            length=length,
        )

    @property
    def n_channels(self) -> int:
        return self.weight.shape[0]

    def param_count(self) -> int:
        return self.n_channels * (self.length**2 + self.length + 1)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias, "gate": self.gate}


@dataclass(frozen=True)
class AdapterConfig:
    kind: str = "fac"
    use_input_calibration: bool = True
    gate_init: float = DEFAULT_GATE_INIT

    def __post_init__(self) -> None:
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}")


@dataclass
class AdapterState:
    """Input/output calibration modules plus config; single-writer by contract.

    Output-only mode means ``input_module is None``. The optimizer slots that
    train these arrays live with the protocol engine, keyed by the names from
    :meth:`trainable_arrays`.
    """

    config: AdapterConfig
    output_module: FreqGcmParams | TemporalGcmParams
    input_module: FreqGcmParams | TemporalGcmParams | None = None

    @classmethod
    def create(
        cls, config: AdapterConfig, n_channels: int, lookback: int, horizon: int
    ) -> "AdapterState":
        params = FreqGcmParams if config.kind == "fac" else TemporalGcmParams
        return cls(
            config=config,
            output_module=params.initial(horizon, n_channels, config.gate_init),
            input_module=(
                params.initial(lookback, n_channels, config.gate_init)
                if config.use_input_calibration
                else None
            ),
        )

    def trainable_arrays(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, keyed 'module.param'."""
        out = {f"output.{k}": v for k, v in self.output_module.arrays().items()}
        if self.input_module is not None:
            out.update({f"input.{k}": v for k, v in self.input_module.arrays().items()})
        return out

    def param_count(self) -> int:
        total = self.output_module.param_count()
        if self.input_module is not None:
            total += self.input_module.param_count()
        return total


def param_count(kind: str, n_channels: int, lookback: int, horizon: int, use_input: bool) -> int:
    """Trainable parameter count without building the modules."""
    if kind not in ADAPTER_KINDS:
        raise ValueError(f"unknown adapter kind {kind!r}")
    if min(n_channels, lookback, horizon) < 1:
        raise ValueError("dimensions must be positive")

    def one(length: int) -> int:
        if kind == "fac":
            return 4 * n_channels * n_bins(length) + n_channels
        return n_channels * (length**2 + length + 1)

    return one(horizon) + (one(lookback) if use_input else 0)


def _module_forward(params, x: np.ndarray):
    """Apply one module; returns (output, spectrum_or_none, pre_gate_correction)."""
    if isinstance(params, FreqGcmParams):
        spectrum = rfft(x, axis=1)
        masked = spectrum * params.mask[None] + params.shift[None]
        correction = irfft(masked, params.length, axis=1)
        return x + np.tanh(params.gate)[None, None, :] * correction, spectrum, correction
    correction = np.einsum("cts,bsc->btc", params.weight, x) + params.bias.T[None]
    return x + np.tanh(params.gate)[None, None, :] * correction, None, correction


def calibrate(params: FreqGcmParams | TemporalGcmParams, x: np.ndarray) -> np.ndarray:
    """Gated residual calibration of [B x len x C] signals; identity at zero mask/shift."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != params.length or x.shape[2] != params.n_channels:
        raise ValueError(
            f"expected [B x {params.length} x {params.n_channels}] input, got {x.shape}"
        )
    return _module_forward(params, x)[0]


@dataclass
class ForwardTape:
    """Intermediates retained for the backward pass of one adapter forward."""

    inputs: np.ndarray
    in_spectrum: np.ndarray | None
    in_correction: np.ndarray | None
    model_inputs: np.ndarray
    base_prediction: np.ndarray
    out_spectrum: np.ndarray | None
    out_correction: np.ndarray
    prediction: np.ndarray


def adapter_forward(
    state: AdapterState,
    model: ForecasterModel,
    inputs: np.ndarray,
    forward_seconds: list[float] | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """Calibrated prediction: optional input module -> frozen model -> output module.

    ``forward_seconds`` (when given) accumulates wall time spent inside the
    frozen forecaster so callers can report adapter-only adaptation time.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if state.input_module is not None:
        model_in, in_spec, in_corr = _module_forward(state.input_module, inputs)
    else:
        model_in, in_spec, in_corr = inputs, None, None
    start = perf_counter()
    base = model.forward(model_in)
    if forward_seconds is not None:
        forward_seconds.append(perf_counter() - start)
    pred, out_spec, out_corr = _module_forward(state.output_module, base)
    tape = ForwardTape(
        inputs=inputs,
        in_spectrum=in_spec,
        in_correction=in_corr,
        model_inputs=model_in,
        base_prediction=base,
        out_spectrum=out_spec,
        out_correction=out_corr,
        prediction=pred,
    )
    return pred, tape


def _module_backward(params, x, spectrum, correction, grad_out):
    """Gradients of one module given d(loss)/d(module output).

    Returns (param grads dict, d(loss)/d(module input)).
    """
    gate_act = np.tanh(params.gate)
    grad_gate = (1.0 - gate_act**2) * np.sum(grad_out * correction, axis=(0, 1))
    gated = gate_act[None, None, :] * grad_out
    if isinstance(params, FreqGcmParams):
        grad_masked = rfft_adjoint(gated, axis=1)           # d loss / d (S*W + B)
        grad_shift = grad_masked.sum(axis=0)
        grad_mask = (grad_masked * np.conj(spectrum)).sum(axis=0)
        grad_spectrum = grad_masked * np.conj(params.mask)[None]
        grad_x = grad_out + rfft_vjp(grad_spectrum, params.length, axis=1)
        return {"mask": grad_mask, "shift": grad_shift, "gate": grad_gate}, grad_x
    grad_weight = np.einsum("btc,bsc->cts", gated, x)
    grad_bias = gated.sum(axis=0).T
    grad_x = grad_out + np.einsum("cts,btc->bsc", params.weight, gated)
    return {"weight": grad_weight, "bias": grad_bias, "gate": grad_gate}, grad_x


def adapter_backward(
    state: AdapterState,
    model: ForecasterModel,
    tape: ForwardTape,
    grad_prediction: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact adapter gradients for a scalar loss with d(loss)/d(prediction) given.

    Keys mirror :meth:`AdapterState.trainable_arrays`; the frozen forecaster
    contributes only its VJP. In output-only mode no 'input.*' keys exist.
    """
    grad_prediction = np.asarray(grad_prediction, dtype=np.float64)
    if grad_prediction.shape != tape.prediction.shape:
        raise ValueError(
            f"grad_prediction shape {grad_prediction.shape} does not match "
            f"prediction shape {tape.prediction.shape}"
        )
    out_grads, grad_base = _module_backward(
        state.output_module,
        tape.base_prediction,
        tape.out_spectrum,
        tape.out_correction,
        grad_prediction,
    )
    grads = {f"output.{k}": v for k, v in out_grads.items()}
    if state.input_module is not None:
        grad_model_in = model.vjp(tape.model_inputs, grad_base)
        in_grads, _ = _module_backward(
            state.input_module,
            tape.inputs,
            tape.in_spectrum,
            tape.in_correction,
            grad_model_in,
        )
        grads.update({f"input.{k}": v for k, v in in_grads.items()})
    return grads


def _encode_array(arr: np.ndarray) -> dict:
    if np.iscomplexobj(arr):
        return {
            "shape": list(arr.shape),
            "dtype": "complex",
            "data": arr.view(np.float64).reshape(-1).tolist(),
        }
    return {"shape": list(arr.shape), "dtype": "float", "data": arr.reshape(-1).tolist()}


def _decode_array(spec: dict) -> np.ndarray:
    flat = np.asarray(spec["data"], dtype=np.float64)
    if spec["dtype"] == "complex":
        return flat.view(np.complex128).reshape(spec["shape"])
    return flat.reshape(spec["shape"])


def _module_blob(params) -> dict:
    return {
        "family": "fac" if isinstance(params, FreqGcmParams) else "temporal_gcm",
        "length": params.length,
        "arrays": {k: _encode_array(v) for k, v in params.arrays().items()},
    }


def _module_from_blob(blob: dict):
    cls = FreqGcmParams if blob["family"] == "fac" else TemporalGcmParams
    arrays = {k: _decode_array(v) for k, v in blob["arrays"].items()}
    return cls(length=blob["length"], **arrays)


def save_adapter(state: AdapterState, path: str) -> None:
    blob = {
        "format_version": FORMAT_VERSION,
        "kind": state.config.kind,
        "use_input_calibration": state.config.use_input_calibration,
        "gate_init": state.config.gate_init,
        "output_module": _module_blob(state.output_module),
        "input_module": (
            _module_blob(state.input_module) if state.input_module is not None else None
        ),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_adapter(path: str) -> AdapterState:
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported adapter blob version {blob.get('format_version')!r}")
    return AdapterState(
        config=AdapterConfig(
            kind=blob["kind"],
            use_input_calibration=blob["use_input_calibration"],
            gate_init=blob["gate_init"],
        ),
        output_module=_module_from_blob(blob["output_module"]),
        input_module=(
            _module_from_blob(blob["input_module"]) if blob["input_module"] else None
        ),
    )
