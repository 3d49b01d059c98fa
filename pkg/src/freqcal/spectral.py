"""One-sided real FFTs, their adjoints, and dominant-period estimation.

Convention (fixed for the whole package): the forward transform is
unnormalized, ``coeffs[f] = sum_t x[t] * exp(-2j*pi*f*t/n)``, and the inverse
carries the ``1/n`` factor. This matches ``numpy.fft.rfft`` / ``irfft`` with
the default ("backward") norm. All adjoint scale factors below are exact for
this convention and would be wrong for any other, so do not change it.

The inverse transform of a one-sided spectrum uses only the real parts of the
DC bin and (for even length) the Nyquist bin; their imaginary parts are dead
directions. ``irfft`` makes that explicit, and the adjoints return exact
zeros for those directions, which keeps analytic gradients consistent with
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "OneSidedSpectrum",
    "n_bins",
    "rfft",
    "irfft",
    "hermitian_fold_scale",
    "rfft_adjoint",
    "rfft_vjp",
    "estimate_dominant_period",
]

# Absolute floor for the DC/Nyquist imaginary-part check in strict irfft.
_HERMITIAN_TOL = 1e-9


def n_bins(length: int) -> int:
    """Number of one-sided bins for a real signal of the given length."""
    if length < 1:
        raise ValueError(f"signal length must be >= 1, got {length}")
    return length // 2 + 1


def rfft(x: np.ndarray, axis: int = -2) -> np.ndarray:
    """One-sided DFT of a real signal along ``axis`` (unnormalized forward)."""
    return np.fft.rfft(np.asarray(x, dtype=np.float64), axis=axis)


def _zero_dead_bins(coeffs: np.ndarray, length: int, axis: int) -> np.ndarray:
    """Return a copy with the DC (and Nyquist, if present) imaginary parts zeroed."""
    out = np.array(coeffs, dtype=np.complex128, copy=True)
    idx: list[object] = [slice(None)] * out.ndim
    idx[axis] = 0
    out[tuple(idx)] = out[tuple(idx)].real
    if length % 2 == 0 and length > 1:
        idx[axis] = length // 2
        out[tuple(idx)] = out[tuple(idx)].real
    return out


def irfft(coeffs: np.ndarray, length: int, axis: int = -2, strict: bool = False) -> np.ndarray:
    """Inverse of :func:`rfft` (applies the 1/length scaling).

    Only the real parts of the DC and Nyquist bins enter the result. With
    ``strict=True`` an imaginary part above tolerance on those bins raises
    instead of being dropped; internal gradient code calls with the default
    because masked spectra legitimately carry (ignored) imaginary parts there.
    """
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    if coeffs.shape[axis] != n_bins(length):
        raise ValueError(
            f"spectrum has {coeffs.shape[axis]} bins along axis {axis}, "
            f"expected {n_bins(length)} for length {length}"
        )
    if strict:
        tol = _HERMITIAN_TOL * max(1.0, float(np.max(np.abs(coeffs))) if coeffs.size else 1.0)
        idx: list[object] = [slice(None)] * coeffs.ndim
        idx[axis] = 0
        bad = float(np.max(np.abs(coeffs[tuple(idx)].imag))) if coeffs.size else 0.0
        if length % 2 == 0 and length > 1:
            idx[axis] = length // 2
            bad = max(bad, float(np.max(np.abs(coeffs[tuple(idx)].imag))))
        if bad > tol:
            raise ValueError(
                f"DC/Nyquist imaginary part {bad:.3e} exceeds tolerance {tol:.3e}"
            )
    return np.fft.irfft(_zero_dead_bins(coeffs, length, axis), n=length, axis=axis)


def hermitian_fold_scale(length: int) -> np.ndarray:
    """Adjoint fold factors per bin: 2/n for interior bins, 1/n for DC/Nyquist."""
    bins = n_bins(length)
    scale = np.full(bins, 2.0 / length)
    scale[0] = 1.0 / length
    if length % 2 == 0 and length > 1:
        scale[-1] = 1.0 / length
    return scale


def rfft_adjoint(grad_time: np.ndarray, axis: int = -2) -> np.ndarray:
    """Gradient w.r.t. the one-sided coefficients of ``irfft``.

    Given ``g = dLoss/d(irfft(coeffs))``, returns ``dLoss/d(coeffs)`` with each
    complex coefficient treated as an independent (re, im) pair. The Hermitian
    folding of the one-sided layout shows up as the 2/n interior and 1/n
    DC/Nyquist factors; the DC/Nyquist imaginary components are dead and get
    exact zeros.
    """
    grad_time = np.asarray(grad_time, dtype=np.float64)
    length = grad_time.shape[axis]
    scale = hermitian_fold_scale(length)
    shape = [1] * grad_time.ndim
    shape[axis] = len(scale)
    out = np.fft.rfft(grad_time, axis=axis) * scale.reshape(shape)
    return _zero_dead_bins(out, length, axis)


def rfft_vjp(grad_coeffs: np.ndarray, length: int, axis: int = -2) -> np.ndarray:
    """Gradient w.r.t. the real signal of ``rfft``.

    Given ``Z = dLoss/d(rfft(x))`` in the (re, im)-pair sense, returns
    ``dLoss/dx``. No Hermitian doubling applies here: each one-sided bin is its
    own parameter direction, so ``dL/dx[t] = sum_f Re(Z_f * exp(+2j*pi*f*t/n))``,
    computed via the inverse transform with interior bins halved.
    """
    grad_coeffs = np.asarray(grad_coeffs, dtype=np.complex128)
    if grad_coeffs.shape[axis] != n_bins(length):
        raise ValueError(
            f"gradient has {grad_coeffs.shape[axis]} bins along axis {axis}, "
            f"expected {n_bins(length)} for length {length}"
        )
    folded = _zero_dead_bins(grad_coeffs, length, axis)
    interior: list[object] = [slice(None)] * folded.ndim
    interior[axis] = slice(1, length // 2 + (length % 2))
    folded[tuple(interior)] *= 0.5
    return length * np.fft.irfft(folded, n=length, axis=axis)


@dataclass(frozen=True)
class OneSidedSpectrum:
    """One-sided spectrum of a real signal: ``coeffs`` is [F x C], F = len//2+1.

    Bin 0 is DC; bin F-1 is Nyquist when ``length`` is even. ``length`` must be
    kept because odd and even signals of neighbouring lengths share F.
    """

    coeffs: np.ndarray
    length: int

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.ndim != 2:
            raise ValueError("coeffs must be [n_bins, n_channels]")
        if coeffs.shape[0] != n_bins(self.length):
            raise ValueError(
                f"expected {n_bins(self.length)} bins for length {self.length}, "
                f"got {coeffs.shape[0]}"
            )
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_signal(cls, x: np.ndarray) -> "OneSidedSpectrum":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("signal must be [length, n_channels]")
        return cls(coeffs=rfft(x, axis=0), length=x.shape[0])

    def to_signal(self) -> np.ndarray:
        """Inverse transform back to [length, n_channels]; strict about DC/Nyquist."""
        return irfft(self.coeffs, self.length, axis=0, strict=True)


def estimate_dominant_period(train_values: np.ndarray) -> int:
    """Dominant period of a (normalized) train region, for batch-size scheduling.

    Takes the argmax over non-DC bins of the channel-averaged one-sided
    amplitude spectrum and returns ``round(T / f*)``, clamped to [2, T//2].
    Top-1 argmax is deliberate; harmonic aggregation is out of scope.
    """
    values = np.asarray(train_values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n_steps = values.shape[0]
    if n_steps < 4:
        raise ValueError(f"need at least 4 train steps to estimate a period, got {n_steps}")
    amplitude = np.abs(np.fft.rfft(values, axis=0)).mean(axis=1)
    star = 1 + int(np.argmax(amplitude[1:]))
    period = int(round(n_steps / star))
    return int(np.clip(period, 2, n_steps // 2))
