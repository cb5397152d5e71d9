"""Waveform container, WAV I/O, test-signal synthesis and uniform resampling.

Everything downstream of this module works on float64 samples in a nominal
[-1, 1] range; WAV files on disk are 16-bit PCM little-endian.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .errors import FormatError, ParameterError, UnsupportedFormatError

DEFAULT_SWEEP_RATE = 48000


@dataclass
class Waveform:
    """Uniformly sampled signal: shape (n,) mono or (n, c) multichannel."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim not in (1, 2):
            raise ParameterError("samples must be 1-D (mono) or 2-D (frames x channels)")
        if int(self.sample_rate) <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ParameterError("samples contain NaN or Inf")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def channel(self, idx: int) -> np.ndarray:
        """Return one channel as a 1-D array (mono: idx must be 0)."""
        if self.samples.ndim == 1:
            if idx != 0:
                raise ParameterError(f"mono waveform has no channel {idx}")
            return self.samples
        return self.samples[:, idx]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class SweepSpec:
    """Four-segment calibration signal: tone, two linear up-sweeps, tone.

    The leading and trailing tones double as synchronization markers; the
    second sweep intentionally runs past any plausible Nyquist limit so that
    aliased content is observable.
    """

    tone1_hz: float = 200.0
    tone1_s: float = 5.0
    sweep1_max_hz: float = 1000.0
    sweep1_s: float = 4.0
    sweep2_max_hz: float = 16000.0
    sweep2_s: float = 4.0
    tone2_hz: float = 400.0
    tone2_s: float = 5.0
    amplitude: float = 0.8

    def validate(self):
        for name in ("tone1_s", "sweep1_s", "sweep2_s", "tone2_s"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        for name in ("tone1_hz", "sweep1_max_hz", "sweep2_max_hz", "tone2_hz"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


def generate_tone_sweep(spec: SweepSpec, rate: int = DEFAULT_SWEEP_RATE) -> Waveform:
    """Synthesize the tone-and-sweep signal with phase-continuous segments.

    Sweep segments are linear-frequency chirps evaluated from the exact
    quadratic phase integral phi(t) = 2*pi*(f0*t + (f1-f0)*t^2/(2*T)); the
    running phase is carried across segment boundaries so the concatenation
    has no discontinuities.
    """
    spec.validate()
    if rate <= 0:
        raise ParameterError(f"rate must be positive, got {rate}")

    segments = [
        (spec.tone1_hz, spec.tone1_hz, spec.tone1_s),
        (0.0, spec.sweep1_max_hz, spec.sweep1_s),
        (0.0, spec.sweep2_max_hz, spec.sweep2_s),
        (spec.tone2_hz, spec.tone2_hz, spec.tone2_s),
    ]
    parts = []
    phase = 0.0
    for f0, f1, dur in segments:
        n = int(round(dur * rate))
        t = np.arange(n) / rate
        seg_phase = 2.0 * np.pi * (f0 * t + (f1 - f0) * t * t / (2.0 * dur))
        parts.append(np.sin(phase + seg_phase))
        phase += 2.0 * np.pi * (f0 * dur + (f1 - f0) * dur / 2.0)
    return Waveform(spec.amplitude * np.concatenate(parts), rate)


def speechlike(duration_s: float, rate: int = 16000, seed: int = 0) -> Waveform:
    """Deterministic speech-shaped test signal (no real speech involved).

    Voiced stretches are harmonic stacks with a drifting fundamental around
    120 Hz under formant-style spectral envelopes, interleaved with weak
    wideband bursts standing in for fricatives; an utterance-rate amplitude
    envelope gates everything. Useful wherever a test needs "speech-like"
    structure: PSD priors, STOI sanity checks, denoiser training clips.
    """
    if duration_s <= 0 or rate <= 0:
        raise ParameterError("duration and rate must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate

    f0 = 120.0 * (1.0 + 0.12 * np.sin(2 * np.pi * 2.3 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    voiced = np.zeros(n)
    formants = [(500.0, 1.0), (950.0, 0.6), (1400.0, 0.45), (2500.0, 0.2)]
    for k in range(1, 22):
        fk = k * 120.0
        gain = sum(a * math.exp(-0.5 * ((fk - fc) / 260.0) ** 2) for fc, a in formants)
        voiced += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    frication = rng.standard_normal(n)
    frication = np.diff(frication, prepend=0.0)  # high-pass tilt
    gate = 0.5 * (1 + np.sign(np.sin(2 * np.pi * 3.1 * t + rng.uniform(0, 2 * np.pi))))

    env = 0.55 + 0.45 * np.sin(2 * np.pi * 1.7 * t + rng.uniform(0, 2 * np.pi))
    x = env * (voiced + 0.06 * gate * frication)
    x /= np.max(np.abs(x)) + 1e-12
    return Waveform(0.8 * x, rate)


# --- WAV I/O -----------------------------------------------------------

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM little-endian WAV (mono or stereo)."""
    if w.channels > 2:
        raise ParameterError("WAV writer supports mono or stereo only")
    data = w.samples if w.samples.ndim == 2 else w.samples[:, None]
    pcm = np.clip(np.round(data * 32767.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    nch = data.shape[1]
    byte_rate = w.sample_rate * nch * 2
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack(
        "<IHHIIHH", 16, _WAVE_FORMAT_PCM, nch, w.sample_rate, byte_rate, nch * 2, 16
    )
    with open(path, "wb") as fh:
        fh.write(header + fmt + b"data" + struct.pack("<I", len(payload)) + payload)


def read_wav(path) -> Waveform:
    """Read a PCM WAV (16-bit int or 32-bit float); stereo is averaged to mono."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise FormatError(f"{path}: data chunk truncated")
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    tag, nch, rate, _byte_rate, _block, bits = fmt
    if nch not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {nch} channels unsupported")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag} / {bits} bits unsupported")
    if nch == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    return Waveform(raw, rate)


# --- Uniform resampling ------------------------------------------------

_KAISER_BETA = 8.0
_KERNEL_HALF_PERIODS = 32  # sinc half-width in periods of the lower Nyquist
_CUTOFF_FACTOR = 0.8  # transition band sits inside the top 20% of the band


def _antialias_kernel(src: int, dst: int, up: int) -> np.ndarray:
    """Windowed-sinc low-pass for the intermediate rate src*up."""
    inter = src * up
    low = min(src, dst)
    cutoff_hz = _CUTOFF_FACTOR * low / 2.0
    half = int(round(_KERNEL_HALF_PERIODS * inter / low))
    n = np.arange(-half, half + 1)
    h = (2.0 * cutoff_hz / inter) * np.sinc(2.0 * cutoff_hz * n / inter)
    h *= np.kaiser(len(n), _KAISER_BETA)
    return h


def resample_uniform(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling to target_rate.

    Polyphase windowed-sinc (Kaiser beta=8). Output length is exactly
    round(n * target/source). Content up to 0.8x the lower Nyquist is
    preserved; the top of the band is traded for alias rejection.
    """
    if target_rate <= 0:
        raise ParameterError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    if len(w.samples) == 0:
        return Waveform(np.zeros((0,) if w.samples.ndim == 1 else (0, w.channels)), target_rate)

    g = math.gcd(w.sample_rate, target_rate)
    up, down = target_rate // g, w.sample_rate // g
    h = _antialias_kernel(w.sample_rate, target_rate, up)
    out = resample_poly(w.samples, up, down, axis=0, window=h)

    n_out = int(round(len(w.samples) * target_rate / w.sample_rate))
    if len(out) >= n_out:
        out = out[:n_out]
    else:
        pad = [(0, n_out - len(out))] + [(0, 0)] * (out.ndim - 1)
        out = np.pad(out, pad)
    return Waveform(out, target_rate)
