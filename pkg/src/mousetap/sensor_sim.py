"""Surface membrane + optical mouse sensor simulation.

The chain is: audio amplitude -> membrane displacement (polynomial
nonlinearity, resonant band-pass, shaped sensor noise) -> poll-clocked DPI
quantization with carry -> sparse event stream. The pixel-level
cross-correlation displacement estimator and the recorded-log degraders
live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import iirpeak, lfilter

from .errors import ParameterError
from .signal_core import Waveform

# Fixed anisotropy between the axes: the Y channel sees a scaled copy of the
# X displacement so both recorded channels stay informative.
Y_COUPLING = 0.4

_NOISE_SHAPING_Q = 2.0


@dataclass(frozen=True)
class SurfaceModel:
    """Membrane transfer model: linear gain, low-order harmonics, resonance,
    and a shaped stationary noise floor."""

    gain: float  # inches of displacement per unit audio amplitude
    resonance_hz: float
    resonance_q: float
    h2: float = 0.0  # 2nd-harmonic coefficient
    h3: float = 0.0  # 3rd-harmonic coefficient
    noise_rms: float = 0.0  # inches
    noise_peak_hz: float = 1000.0
    thickness_mm: float = 1.0
    density: float = 1000.0  # kg/m^3
    wave_speed: float = 2000.0  # m/s

    def __post_init__(self):
        if self.gain < 0 or self.noise_rms < 0:
            raise ParameterError("gain and noise_rms must be >= 0")
        if self.resonance_q <= 0:
            raise ParameterError("resonance_q must be > 0")
        if self.thickness_mm <= 0 or self.density <= 0 or self.wave_speed <= 0:
            raise ParameterError("material properties must be > 0")


#: Qualitative material presets. Plastic couples strongly and shows the
#: clearest harmonics; paper is quieter but couples less; cardboard damps
#: the signal and is the noisiest. Absolute values are calibration knobs;
#: only the relative ordering is load-bearing.
SURFACE_PRESETS = {
    "plastic": SurfaceModel(
        gain=2.4e-3, resonance_hz=900.0, resonance_q=2.0, h2=0.2, h3=0.05,
        noise_rms=5e-5, noise_peak_hz=1000.0,
        thickness_mm=2.0, density=1200.0, wave_speed=2300.0,
    ),
    "paper": SurfaceModel(
        gain=1.0e-3, resonance_hz=700.0, resonance_q=1.0, h2=0.15, h3=0.03,
        noise_rms=2e-5, noise_peak_hz=900.0,
        thickness_mm=0.3, density=800.0, wave_speed=1500.0,
    ),
    "cardboard": SurfaceModel(
        gain=4.0e-4, resonance_hz=500.0, resonance_q=3.0, h2=0.1, h3=0.02,
        noise_rms=1e-4, noise_peak_hz=1100.0,
        thickness_mm=3.0, density=600.0, wave_speed=1000.0,
    ),
}


@dataclass(frozen=True)
class SensorConfig:
    dpi: int = 20000
    poll_rate_hz: int = 8000
    ips_cap: float = 650.0  # max tracking speed, inches/second
    count_saturation: int = 127  # signed 8-bit style HID report field

    def __post_init__(self):
        if self.dpi <= 0 or self.poll_rate_hz <= 0 or self.ips_cap <= 0:
            raise ParameterError("dpi, poll_rate_hz and ips_cap must be > 0")
        if self.count_saturation < 1:
            raise ParameterError("count_saturation must be >= 1")


@dataclass
class EventStream:
    """Sparse mouse packet log: (dt_us, dx, dy) triplets plus sensor metadata.

    dt_us is the time since the previous packet. The sensor never emits
    (0, 0) packets; degraders applied to a recorded log may produce them.
    """

    dt_us: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    meta: SensorConfig = field(default_factory=SensorConfig)

    def __post_init__(self):
        self.dt_us = np.asarray(self.dt_us, dtype=np.int64)
        self.dx = np.asarray(self.dx, dtype=np.int64)
        self.dy = np.asarray(self.dy, dtype=np.int64)
        if not (len(self.dt_us) == len(self.dx) == len(self.dy)):
            raise ParameterError("dt_us, dx, dy must have equal length")
        if len(self.dt_us) and self.dt_us.min() <= 0:
            raise ParameterError("every dt_us must be > 0")

    @classmethod
    def from_packets(cls, packets, meta: SensorConfig | None = None) -> "EventStream":
        arr = np.asarray(list(packets), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], meta or SensorConfig())

    @property
    def packets(self):
        return list(zip(self.dt_us.tolist(), self.dx.tolist(), self.dy.tolist()))

    def times_us(self) -> np.ndarray:
        """Absolute packet times t_i = running sum of dt_us."""
        return np.cumsum(self.dt_us)

    def __len__(self) -> int:
        return len(self.dt_us)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            np.array_equal(self.dt_us, other.dt_us)
            and np.array_equal(self.dx, other.dx)
            and np.array_equal(self.dy, other.dy)
        )


@dataclass
class PixelFrame:
    """Single sensor snapshot: HxW light intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 2:
            raise ParameterError("pixels must be a 2-D grid, at least 2x2")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ParameterError("pixel intensities must lie in [0, 1]")

    @property
    def shape(self):
        return self.pixels.shape


def _resonator(center_hz: float, q: float, rate: int):
    if not 0 < center_hz < rate / 2:
        raise ParameterError(
            f"resonance {center_hz} Hz must lie inside (0, {rate / 2}) at rate {rate}"
        )
    return iirpeak(center_hz, q, fs=rate)


def shaped_noise(n: int, rate: int, peak_hz: float, rms: float, seed: int) -> np.ndarray:
    """Seeded sensor noise: white Gaussian shaped by a Q=2 resonator at
    peak_hz, then normalized to the requested RMS."""
    if rms == 0.0 or n == 0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    b, a = _resonator(peak_hz, _NOISE_SHAPING_Q, rate)
    x = lfilter(b, a, rng.standard_normal(n))
    return x * (rms / (np.sqrt(np.mean(x * x)) + 1e-300))


def surface_response(audio: Waveform, surface: SurfaceModel, seed: int = 0) -> Waveform:
    """Map audio amplitude to membrane displacement in inches (same rate).

    d(t) = BPF[g*a + h2*g*a^2 + h3*g*a^3] + n(t) with BPF a second-order
    resonator at (resonance_hz, resonance_q) and n the shaped noise floor.
    """
    if audio.channels != 1:
        raise ParameterError("surface_response expects a mono waveform")
    a = audio.samples
    g = surface.gain
    driven = g * a + surface.h2 * g * a * a + surface.h3 * g * a * a * a
    b, den = _resonator(surface.resonance_hz, surface.resonance_q, audio.sample_rate)
    d = lfilter(b, den, driven)
    d = d + shaped_noise(len(a), audio.sample_rate, surface.noise_peak_hz,
                         surface.noise_rms, seed)
    return Waveform(d, audio.sample_rate)


def _poll_intervals_us(duration_us: float, poll_rate_hz: int,
                       jitter_sigma_us: float, rng) -> np.ndarray:
    nominal = 1e6 / poll_rate_hz
    n = int(duration_us / nominal) + 2
    if jitter_sigma_us > 0:
        iv = nominal + rng.normal(0.0, jitter_sigma_us, size=n)
        np.maximum(iv, 1.0, out=iv)
    else:
        iv = np.full(n, nominal)
    t = np.cumsum(iv)
    return t[t <= duration_us]


def _quantize_with_carry(steps: np.ndarray, dpi: int, saturation: int) -> np.ndarray:
    """Counts per poll via an error-accumulator: count = floor(D*step + carry).

    Without saturation this telescopes to diff(floor(D*cumsum(steps))), which
    is how the fast path computes it; per-report clamping returns the excess
    to the carry so no motion is lost.
    """
    cum = np.floor(dpi * np.cumsum(steps))
    counts = np.diff(cum, prepend=0.0)
    if np.max(np.abs(counts), initial=0.0) <= saturation:
        return counts.astype(np.int64)
    # slow path: saturation engaged, carry must absorb the clamped excess
    out = np.empty(len(steps), dtype=np.int64)
    carry = 0.0
    for i, step in enumerate(steps):
        s = dpi * step + carry
        c = int(np.floor(s))
        carry = s - c
        if c > saturation:
            carry += c - saturation
            c = saturation
        elif c < -saturation:
            carry += c + saturation
            c = -saturation
        out[i] = c
    return out


def simulate_sensor(displacement: Waveform, cfg: SensorConfig,
                    jitter_sigma_us: float = 0.0, seed: int = 0) -> EventStream:
    """Quantize a displacement trace (inches) into a mouse packet stream.

    Polls the displacement at ~1/poll_rate intervals (optionally jittered),
    converts per-interval movement to counts with a persistent fractional
    carry, clamps to the per-report saturation, and emits a packet whenever
    the quantized counts are nonzero. X is driven by the displacement
    directly, Y by Y_COUPLING times it.
    """
    if displacement.channels != 1:
        raise ParameterError("simulate_sensor expects a mono displacement trace")
    if displacement.sample_rate < 2 * cfg.poll_rate_hz:
        raise ParameterError(
            f"displacement rate {displacement.sample_rate} must be >= "
            f"2x poll rate {cfg.poll_rate_hz}"
        )
    rng = np.random.default_rng(seed)
    d = displacement.samples
    duration_us = len(d) / displacement.sample_rate * 1e6
    tpoll_us = _poll_intervals_us(duration_us, cfg.poll_rate_hz, jitter_sigma_us, rng)
    if len(tpoll_us) == 0:
        return EventStream(np.empty(0, np.int64), np.empty(0, np.int64),
                           np.empty(0, np.int64), cfg)

    tgrid = np.arange(len(d)) / displacement.sample_rate
    pos = np.interp(tpoll_us * 1e-6, tgrid, d)
    step_x = np.diff(pos, prepend=d[0])
    step_y = Y_COUPLING * step_x

    # tracking-speed ceiling: clamp the per-interval motion vector
    max_step = cfg.ips_cap / cfg.poll_rate_hz
    norm = np.hypot(step_x, step_y)
    over = norm > max_step
    if np.any(over):
        scale = max_step / norm[over]
        step_x[over] *= scale
        step_y[over] *= scale

    cx = _quantize_with_carry(step_x, cfg.dpi, cfg.count_saturation)
    cy = _quantize_with_carry(step_y, cfg.dpi, cfg.count_saturation)

    emit = (cx != 0) | (cy != 0)
    if not np.any(emit):
        return EventStream(np.empty(0, np.int64), np.empty(0, np.int64),
                           np.empty(0, np.int64), cfg)
    t_emit = np.round(tpoll_us[emit]).astype(np.int64)
    dt = np.diff(t_emit, prepend=0)
    np.maximum(dt, 1, out=dt)
    return EventStream(dt, cx[emit], cy[emit], cfg)


def estimate_displacement_fft(frame_t: PixelFrame, frame_prev: PixelFrame):
    """Integer pixel shift between two frames via FFT cross-correlation.

    Computes C = IFFT(FFT(I_t) o conj(FFT(I_prev))) and returns the argmax
    location as a signed circular shift (dx, dy), each in [-n/2, n/2).
    """
    a, b = frame_t.pixels, frame_prev.pixels
    if a.shape != b.shape:
        raise ParameterError(f"frame shapes differ: {a.shape} vs {b.shape}")
    corr = np.fft.ifft2(np.fft.fft2(a) * np.conj(np.fft.fft2(b))).real
    iy, ix = np.unravel_index(np.argmax(corr), corr.shape)
    h, w = a.shape
    dy = int((iy + h // 2) % h - h // 2)
    dx = int((ix + w // 2) % w - w // 2)
    return dx, dy


def correlate_shifts_exhaustive(frame_t: PixelFrame, frame_prev: PixelFrame):
    """Spatial-domain oracle for the FFT estimator: evaluates the circular
    correlation at every shift by brute force and returns its argmax."""
    a, b = frame_t.pixels, frame_prev.pixels
    if a.shape != b.shape:
        raise ParameterError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    best, best_shift = -np.inf, (0, 0)
    for sy in range(h):
        for sx in range(w):
            c = float(np.sum(a * np.roll(b, (sy, sx), axis=(0, 1))))
            if c > best:
                best, best_shift = c, (sy, sx)
    sy, sx = best_shift
    dy = (sy + h // 2) % h - h // 2
    dx = (sx + w // 2) % w - w // 2
    return dx, dy


def inject_timing_jitter(ev: EventStream, sigma_us: float, seed: int = 0) -> EventStream:
    """Perturb packet timing: dt' = max(1, round(dt + N(0, sigma))).

    Counts are untouched; packet count is preserved. Models host-side
    scheduling jitter applied to a recorded log.
    """
    if sigma_us < 0:
        raise ParameterError("sigma_us must be >= 0")
    if sigma_us == 0 or len(ev) == 0:
        return EventStream(ev.dt_us.copy(), ev.dx.copy(), ev.dy.copy(), ev.meta)
    rng = np.random.default_rng(seed)
    noisy = np.round(ev.dt_us + rng.normal(0.0, sigma_us, size=len(ev)))
    dt = np.maximum(noisy, 1.0).astype(np.int64)
    return EventStream(dt, ev.dx.copy(), ev.dy.copy(), ev.meta)


def inject_count_noise(ev: EventStream, sigma_counts: float, seed: int = 0) -> EventStream:
    """Add rounded N(0, sigma) independently to dx and dy of each packet.

    Packets that land on (0, 0) are retained: the degrader operates on a
    recorded log, not on the sensor's emission rule. Timing is untouched.
    """
    if sigma_counts < 0:
        raise ParameterError("sigma_counts must be >= 0")
    if sigma_counts == 0 or len(ev) == 0:
        return EventStream(ev.dt_us.copy(), ev.dx.copy(), ev.dy.copy(), ev.meta)
    rng = np.random.default_rng(seed)
    dx = ev.dx + np.round(rng.normal(0.0, sigma_counts, size=len(ev))).astype(np.int64)
    dy = ev.dy + np.round(rng.normal(0.0, sigma_counts, size=len(ev))).astype(np.int64)
    return EventStream(ev.dt_us.copy(), dx, dy, ev.meta)
