"""Objective evaluation: scale-invariant SNR, short-time objective
intelligibility, and classification accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSignalError, ParameterError
from .signal_core import Waveform, resample_uniform

SI_SNR_CAP_DB = 60.0

# STOI constants (classic variant)
_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_FIRST_CENTER_HZ = 150.0
_STOI_SEGMENT_FRAMES = 30  # 384 ms at 10 kHz / hop 128
_STOI_DYN_RANGE_DB = 40.0
_STOI_CLIP_DB = -15.0


@dataclass
class MetricsReport:
    """Per-stage metric map for one utterance."""

    stages: dict[str, tuple[float, float]] = field(default_factory=dict)

    def add(self, stage: str, si_snr_db: float, stoi_value: float | None):
        self.stages[stage] = (si_snr_db, stoi_value)

    def rows(self, utterance: str):
        for stage, (snr, st) in self.stages.items():
            yield utterance, stage, snr, st


def _as_mono(w) -> np.ndarray:
    if isinstance(w, Waveform):
        x = w.samples
    else:
        x = np.asarray(w, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x.astype(np.float64)


def si_snr(reference, estimate) -> float:
    """Scale-invariant SNR in dB, capped at +60.

    Both signals are zero-meaned; the estimate is projected onto the
    reference (s_t = <e,r>/<r,r> * r) and the ratio ||s_t||^2/||e-s_t||^2
    is returned in dB. Invariant to any nonzero scaling or constant offset
    of the estimate.
    """
    r = _as_mono(reference)
    e = _as_mono(estimate)
    if len(r) != len(e):
        raise ParameterError(f"length mismatch: {len(r)} vs {len(e)}")
    if len(r) == 0:
        raise ParameterError("empty signals")
    r = r - r.mean()
    e = e - e.mean()
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise ParameterError("reference is all-zero")
    s_t = (float(np.dot(e, r)) / rr) * r
    err = e - s_t
    p_err = float(np.dot(err, err))
    p_sig = float(np.dot(s_t, s_t))
    if p_err <= 0.0 or p_sig / p_err > 10 ** (SI_SNR_CAP_DB / 10):
        return SI_SNR_CAP_DB
    return 10.0 * np.log10(p_sig / p_err)


def accuracy(predictions, truths) -> float:
    """Exact-match ratio between two equal-length label sequences."""
    preds = list(predictions)
    trues = list(truths)
    if len(preds) != len(trues):
        raise ParameterError(f"length mismatch: {len(preds)} vs {len(trues)}")
    if not preds:
        raise ParameterError("empty label sequences")
    return sum(p == t for p, t in zip(preds, trues)) / len(preds)


# --- STOI ----------------------------------------------------------------

def _frames(x: np.ndarray, win: np.ndarray, hop: int) -> np.ndarray:
    n = (len(x) - len(win)) // hop + 1
    if n <= 0:
        return np.zeros((0, len(win)))
    idx = np.arange(len(win))[None, :] + hop * np.arange(n)[:, None]
    return x[idx] * win[None, :]


def _remove_silent_frames(ref: np.ndarray, est: np.ndarray):
    """Drop frames whose reference energy sits >40 dB below the loudest
    frame, then rebuild both signals by overlap-add of the kept frames."""
    win = np.hanning(_STOI_FRAME + 2)[1:-1]
    rf = _frames(ref, win, _STOI_HOP)
    ef = _frames(est, win, _STOI_HOP)
    if len(rf) == 0:
        return np.zeros(0), np.zeros(0)
    energy = 20.0 * np.log10(np.linalg.norm(rf, axis=1) + 1e-300)
    mask = energy > energy.max() - _STOI_DYN_RANGE_DB
    rf, ef = rf[mask], ef[mask]
    n = _STOI_FRAME + _STOI_HOP * (len(rf) - 1) if len(rf) else 0
    out_r = np.zeros(n)
    out_e = np.zeros(n)
    for m in range(len(rf)):
        s = m * _STOI_HOP
        out_r[s : s + _STOI_FRAME] += rf[m]
        out_e[s : s + _STOI_FRAME] += ef[m]
    return out_r, out_e


def _third_octave_matrix(rate: int, n_fft: int):
    centers = _STOI_FIRST_CENTER_HZ * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    lows = centers * 2.0 ** (-1.0 / 6.0)
    highs = centers * 2.0 ** (1.0 / 6.0)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate)
    obm = np.zeros((_STOI_BANDS, len(freqs)))
    for j in range(_STOI_BANDS):
        obm[j, (freqs >= lows[j]) & (freqs < highs[j])] = 1.0
    return obm


def stoi(reference, estimate, rate: int | None = None) -> float:
    """Classic short-time objective intelligibility in [0, 1].

    Pipeline: resample to 10 kHz, drop silent frames (40 dB dynamic range
    on the reference), 256-sample Hann frames zero-padded to a 512-point
    FFT at 50% overlap, 15 one-third-octave bands from 150 Hz, 30-frame
    (384 ms) segments with per-band normalization and -15 dB SDR clipping,
    mean of segment correlations.
    """
    if isinstance(reference, Waveform):
        if rate is None:
            rate = reference.sample_rate
    if rate is None:
        raise ParameterError("rate required when passing bare arrays")
    r = _as_mono(reference)
    e = _as_mono(estimate)
    if len(r) != len(e):
        raise ParameterError(f"length mismatch: {len(r)} vs {len(e)}")
    if rate < _STOI_RATE:
        raise ParameterError(f"stoi needs rate >= {_STOI_RATE}, got {rate}")
    if rate != _STOI_RATE:
        r = resample_uniform(Waveform(r, rate), _STOI_RATE).samples
        e = resample_uniform(Waveform(e, rate), _STOI_RATE).samples

    r, e = _remove_silent_frames(r, e)
    win = np.hanning(_STOI_FRAME + 2)[1:-1]
    rf = np.abs(np.fft.rfft(_frames(r, win, _STOI_HOP), n=_STOI_NFFT, axis=1)) ** 2
    ef = np.abs(np.fft.rfft(_frames(e, win, _STOI_HOP), n=_STOI_NFFT, axis=1)) ** 2
    if len(rf) < _STOI_SEGMENT_FRAMES:
        raise InsufficientSignalError(
            f"only {len(rf)} active frames, need {_STOI_SEGMENT_FRAMES} "
            f"(384 ms of active speech)"
        )
    obm = _third_octave_matrix(_STOI_RATE, _STOI_NFFT)
    x = np.sqrt(rf @ obm.T).T  # (bands, frames)
    y = np.sqrt(ef @ obm.T).T

    clip = 10.0 ** (-_STOI_CLIP_DB / 20.0)
    n = _STOI_SEGMENT_FRAMES
    scores = []
    for m in range(n, x.shape[1] + 1):
        xs = x[:, m - n : m]
        ys = y[:, m - n : m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (
            np.linalg.norm(ys, axis=1, keepdims=True) + 1e-300
        )
        ys_c = np.minimum(alpha * ys, xs * (1.0 + clip))
        xs_z = xs - xs.mean(axis=1, keepdims=True)
        ys_z = ys_c - ys_c.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xs_z, axis=1) * np.linalg.norm(ys_z, axis=1)
        corr = (xs_z * ys_z).sum(axis=1) / np.where(denom > 0, denom, 1.0)
        scores.append(corr.mean())
    return float(np.clip(np.mean(scores), 0.0, 1.0))
