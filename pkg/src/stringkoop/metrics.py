"""Relative error metrics, per-timestep error curves and spectra."""

from __future__ import annotations

import numpy as np

__all__ = [
    "rel_mse",
    "rel_mae",
    "aggregate",
    "timestep_mae",
    "magnitude_spectrum",
    "peak_frequency",
    "probe_index",
]


def _flat(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {truth.shape}")
    if truth.ndim == 2:
        pred, truth = pred[None], truth[None]
    return pred.reshape(len(pred), -1), truth.reshape(len(truth), -1)


def rel_mse(pred, truth) -> np.ndarray:
    """``||pred - truth||^2 / ||truth||^2`` per trajectory (leading axis)."""
    p, t = _flat(pred, truth)
    return np.sum((p - t) ** 2, axis=1) / np.sum(t**2, axis=1)


def rel_mae(pred, truth) -> np.ndarray:
    """``sum |pred - truth| / sum |truth|`` per trajectory."""
    p, t = _flat(pred, truth)
    return np.sum(np.abs(p - t), axis=1) / np.sum(np.abs(t), axis=1)


def aggregate(per_seed_means) -> tuple[float, float]:
    """Mean and (population) standard deviation across seeds."""
    values = np.asarray(per_seed_means, dtype=np.float64)
    return float(values.mean()), float(values.std())


def timestep_mae(pred, truth, probe: int | None = None) -> np.ndarray:
    """Mean absolute error at each time step across trajectories.

    Averaged over the whole field, or taken at one grid column when ``probe`` is given.
    Inputs have shape (N, L, N_x).
    """
    err = np.abs(np.asarray(pred, np.float64) - np.asarray(truth, np.float64))
    if probe is not None:
        return err[:, :, probe].mean(axis=0)
    return err.mean(axis=(0, 2))


def probe_index(grid, position: float = 0.24) -> int:
    return int(np.argmin(np.abs(np.asarray(grid) - position)))


def magnitude_spectrum(signal, sample_rate: float, nfft: int | None = None, window: str | None = None):
    """One-sided DFT magnitude and its frequency axis in Hz."""
    signal = np.asarray(signal, dtype=np.float64)
    if window == "hann":
        signal = signal * np.hanning(signal.size)
    nfft = nfft or signal.size
    mag = np.abs(np.fft.rfft(signal, nfft))
    return np.fft.rfftfreq(nfft, 1.0 / sample_rate), mag


def peak_frequency(signal, sample_rate: float, band: tuple[float, float], nfft: int = 1 << 18) -> float:
    """Frequency of the largest Hann-windowed, zero-padded DFT bin inside ``band``."""
    freqs, mag = magnitude_spectrum(signal, sample_rate, nfft=max(nfft, len(signal)), window="hann")
    inside = (freqs >= band[0]) & (freqs <= band[1])
    if not inside.any():
        raise ValueError(f"band {band} contains no DFT bins")
    return float(freqs[inside][np.argmax(mag[inside])])
