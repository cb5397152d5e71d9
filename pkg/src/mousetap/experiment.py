"""Experiment runner: drives audio through the simulated side channel over a
(surface x degradation) grid, writes per-stage artifacts and a metrics table,
and renders summary figures from that table.

metrics.csv schema (fixed):
    utterance,surface,jitter_us,noise_counts,stage,si_snr_db,stoi
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientSignalError, MousetapError, ParameterError
from .metrics import si_snr, stoi
from .reconstruct import (NoiseProfile, SpeechPrior, StftParams,
                          default_speech_prior, estimate_noise_psd,
                          events_to_signal, log_mel_spectrogram,
                          read_noise_profile, read_speech_prior, wiener_filter)
from .sensor_sim import (SURFACE_PRESETS, SensorConfig, SurfaceModel,
                         inject_count_noise, inject_timing_jitter,
                         simulate_sensor, surface_response)
from .signal_core import (SweepSpec, Waveform, generate_tone_sweep, read_wav,
                          resample_uniform, write_wav)
from .telemetry import encode_csv
from .tensorfile import write_tensor

log = logging.getLogger(__name__)

METRICS_HEADER = "utterance,surface,jitter_us,noise_counts,stage,si_snr_db,stoi"
STAGES = ("surface", "resampled", "wiener")

_IDLE_CAPTURE_S = 4.0  # silent capture length used for noise profiles


@dataclass
class ExperimentConfig:
    inputs: list[str] = field(default_factory=lambda: ["sweep"])
    surfaces: list[str] = field(default_factory=lambda: ["plastic"])
    surface_overrides: dict = field(default_factory=dict)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    jitter_us: list[float] = field(default_factory=lambda: [0.0])
    noise_counts: list[float] = field(default_factory=lambda: [0.0])
    stages: tuple = STAGES
    out_dir: str = "out"
    seed: int = 0
    target_rate: int = 16000
    prior_path: str | None = None
    noise_profile_path: str | None = None
    emit_mel: bool = False
    mel_bins: int = 80


def _parse_list(text: str, cast):
    return [cast(part.strip()) for part in text.split(",") if part.strip()]


def load_config(path) -> ExperimentConfig:
    """Parse a line-based `key = value` config file."""
    cfg = ExperimentConfig()
    sensor_kwargs = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "input":
                cfg.inputs = _parse_list(value, str)
            elif key == "surface":
                cfg.surfaces = _parse_list(value, str)
            elif key.startswith("surface."):
                cfg.surface_overrides[key.split(".", 1)[1]] = float(value)
            elif key in ("dpi", "poll_rate_hz", "count_saturation"):
                sensor_kwargs[key] = int(value)
            elif key == "ips_cap":
                sensor_kwargs[key] = float(value)
            elif key == "jitter_us":
                cfg.jitter_us = _parse_list(value, float)
            elif key == "noise_counts":
                cfg.noise_counts = _parse_list(value, float)
            elif key == "stages":
                cfg.stages = tuple(_parse_list(value, str))
            elif key == "out_dir":
                cfg.out_dir = value
            elif key == "seed":
                cfg.seed = int(value)
            elif key == "target_rate":
                cfg.target_rate = int(value)
            elif key == "prior":
                cfg.prior_path = value
            elif key == "noise_profile":
                cfg.noise_profile_path = value
            elif key == "emit_mel":
                cfg.emit_mel = value.lower() in ("1", "true", "yes", "on")
            elif key == "mel_bins":
                cfg.mel_bins = int(value)
            else:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
    if sensor_kwargs:
        cfg.sensor = SensorConfig(**{**cfg.sensor.__dict__, **sensor_kwargs})
    return cfg


def surface_by_name(name: str, overrides: dict | None = None) -> SurfaceModel:
    if name not in SURFACE_PRESETS:
        raise ParameterError(
            f"unknown surface {name!r}; presets: {sorted(SURFACE_PRESETS)}"
        )
    surface = SURFACE_PRESETS[name]
    if overrides:
        surface = replace(surface, **overrides)
    return surface


def _load_input(name: str) -> tuple[str, Waveform]:
    if name == "sweep":
        return "sweep", generate_tone_sweep(SweepSpec())
    if not os.path.isfile(name):
        raise ParameterError(f"input audio not found: {name}")
    stem = os.path.splitext(os.path.basename(name))[0]
    return stem, read_wav(name)


def _simulation_rate(audio_rate: int, poll_rate: int) -> int:
    return audio_rate if audio_rate >= 2 * poll_rate else 6 * poll_rate


def idle_noise_profile(surface: SurfaceModel, sensor: SensorConfig,
                       target_rate: int, seed: int,
                       params: StftParams = StftParams()) -> NoiseProfile:
    """Noise profile from a silent capture run through the same channel.

    Mirrors the physical procedure: record the sensor's idle jitter, rebuild
    a waveform from it, estimate its averaged spectrum. An idle sensor that
    never fires yields an all-zero profile.
    """
    sim_rate = _simulation_rate(target_rate, sensor.poll_rate_hz)
    silent = Waveform(np.zeros(int(_IDLE_CAPTURE_S * sim_rate)), sim_rate)
    disp = surface_response(silent, surface, seed=seed)
    ev = simulate_sensor(disp, sensor, 0.0, seed)
    if len(ev) < 10:
        return NoiseProfile(np.zeros(params.fft_size // 2 + 1),
                            params.fft_size, target_rate)
    wn = events_to_signal(ev, target_rate)
    return estimate_noise_psd(Waveform(wn.samples[:, 0], target_rate), params)


def _metric_row(ref: np.ndarray, est: np.ndarray, rate: int):
    n = min(len(ref), len(est))
    snr = si_snr(ref[:n], est[:n])
    try:
        st = f"{stoi(ref[:n], est[:n], rate):.4f}"
    except (InsufficientSignalError, ParameterError):
        st = ""
    return f"{snr:.3f}", st


@dataclass
class CellResult:
    utterance: str
    surface: str
    jitter_us: float
    noise_counts: float
    rows: list = field(default_factory=list)


def run(cfg: ExperimentConfig) -> int:
    """Execute the experiment grid. Returns the process exit code."""
    # fail fast on unreadable inputs / unwritable output
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
        probe = os.path.join(cfg.out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        raise ParameterError(f"output directory not writable: {exc}") from exc
    inputs = [_load_input(name) for name in cfg.inputs]

    prior = (read_speech_prior(cfg.prior_path) if cfg.prior_path
             else default_speech_prior())
    if prior.rate != cfg.target_rate:
        raise ParameterError(
            f"prior rate {prior.rate} != target rate {cfg.target_rate}"
        )

    failures = 0
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    profile_cache: dict[str, NoiseProfile] = {}
    with open(metrics_path, "w", buffering=1, newline="") as metrics:
        metrics.write(METRICS_HEADER + "\n")
        for utt_idx, (utt, audio) in enumerate(inputs):
            ref16 = resample_uniform(audio, cfg.target_rate)
            ref16 = Waveform(
                ref16.samples if ref16.samples.ndim == 1 else ref16.samples.mean(axis=1),
                cfg.target_rate)
            if cfg.emit_mel:
                write_tensor(
                    os.path.join(cfg.out_dir, f"{utt}_clean.memt"),
                    log_mel_spectrogram(ref16, cfg.mel_bins).frames.transpose(0, 2, 1))
            for surface_name in cfg.surfaces:
                surface = surface_by_name(surface_name, cfg.surface_overrides)
                if surface_name not in profile_cache:
                    if cfg.noise_profile_path:
                        profile_cache[surface_name] = read_noise_profile(
                            cfg.noise_profile_path)
                    else:
                        profile_cache[surface_name] = idle_noise_profile(
                            surface, cfg.sensor, cfg.target_rate,
                            seed=cfg.seed + 7777)
                nprof = profile_cache[surface_name]
                for cell_idx, (jitter, noise) in enumerate(
                        (j, n) for j in cfg.jitter_us for n in cfg.noise_counts):
                    # distinct deterministic seed per (utterance, cell)
                    cell_seed = cfg.seed + 101 * utt_idx + 7 * cell_idx
                    try:
                        _run_cell(cfg, metrics, utt, audio, ref16,
                                  surface_name, surface, nprof, prior,
                                  jitter, noise, cell_seed)
                    except MousetapError as exc:
                        failures += 1
                        log.error("cell (%s,%s,j=%g,n=%g) failed: %s",
                                  utt, surface_name, jitter, noise, exc)
                        with open(os.path.join(cfg.out_dir, "errors.log"),
                                  "a") as elog:
                            elog.write(
                                f"{utt},{surface_name},{jitter},{noise}: {exc}\n")
    return 1 if failures else 0


def _run_cell(cfg, metrics, utt, audio, ref16, surface_name, surface,
              nprof, prior, jitter, noise, cell_seed):
    sim_rate = _simulation_rate(audio.sample_rate, cfg.sensor.poll_rate_hz)
    drive = audio if audio.sample_rate == sim_rate else resample_uniform(audio, sim_rate)
    if drive.channels > 1:
        drive = Waveform(drive.samples.mean(axis=1), sim_rate)

    disp = surface_response(drive, surface, seed=cell_seed)
    ev = simulate_sensor(disp, cfg.sensor, 0.0, cell_seed)
    if jitter:
        ev = inject_timing_jitter(ev, jitter, cell_seed + 1)
    if noise:
        ev = inject_count_noise(ev, noise, cell_seed + 2)

    tag = f"{utt}_{surface_name}_j{jitter:g}_n{noise:g}"
    with open(os.path.join(cfg.out_dir, f"{tag}_events.csv"), "w",
              newline="") as fh:
        fh.write(encode_csv(ev))

    recon = events_to_signal(ev, cfg.target_rate)
    filtered = wiener_filter(recon, nprof, prior)
    write_wav(os.path.join(cfg.out_dir, f"{tag}_resampled.wav"), recon)
    write_wav(os.path.join(cfg.out_dir, f"{tag}_wiener.wav"), filtered)
    if cfg.emit_mel:
        mel = log_mel_spectrogram(filtered, cfg.mel_bins)
        write_tensor(os.path.join(cfg.out_dir, f"{tag}_mel.memt"),
                     mel.frames.transpose(0, 2, 1))

    ref = ref16.samples
    stage_signals = {}
    if "surface" in cfg.stages:
        disp16 = resample_uniform(disp, cfg.target_rate)
        stage_signals["surface"] = disp16.samples
    if "resampled" in cfg.stages:
        stage_signals["resampled"] = recon.samples[:, 0]
    if "wiener" in cfg.stages:
        stage_signals["wiener"] = filtered.samples[:, 0]
    for stage in cfg.stages:
        snr, st = _metric_row(ref, stage_signals[stage], cfg.target_rate)
        metrics.write(f"{utt},{surface_name},{jitter:g},{noise:g},{stage},{snr},{st}\n")


# --- Report figures ---------------------------------------------------------

def load_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_report(metrics_path, out_dir=None) -> list[str]:
    """Render summary figures next to the metrics table.

    Produces per-stage SI-SNR/STOI bars and degradation curves (post-Wiener
    SI-SNR vs jitter and vs count noise) as PNG files; returns their paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = load_metrics(metrics_path)
    if not rows:
        raise ParameterError(f"{metrics_path}: no metric rows")
    out_dir = out_dir or os.path.dirname(os.path.abspath(metrics_path))
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def group_median(rows, key, value="si_snr_db"):
        groups = {}
        for r in rows:
            if r[value] == "":
                continue
            groups.setdefault(key(r), []).append(float(r[value]))
        return {k: float(np.median(v)) for k, v in sorted(groups.items())}

    base = [r for r in rows
            if float(r["jitter_us"]) == 0 and float(r["noise_counts"]) == 0]

    by_stage = group_median(base, lambda r: (r["surface"], r["stage"]))
    if by_stage:
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = [f"{s}\n{st}" for s, st in by_stage]
        ax.bar(range(len(by_stage)), list(by_stage.values()), color="#4878d0")
        ax.set_xticks(range(len(by_stage)), labels, fontsize=8)
        ax.set_ylabel("median SI-SNR (dB)")
        ax.set_title("Reconstruction quality per stage")
        fig.tight_layout()
        p = os.path.join(out_dir, "stage_si_snr.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)

    wiener = [r for r in rows if r["stage"] == "wiener"]
    for column, fname, xlabel in (
        ("jitter_us", "degradation_jitter.png", "timing jitter sigma (us)"),
        ("noise_counts", "degradation_noise.png", "count noise sigma (counts)"),
    ):
        other = "noise_counts" if column == "jitter_us" else "jitter_us"
        sweep = [r for r in wiener if float(r[other]) == 0]
        med = group_median(sweep, lambda r: float(r[column]))
        if len(med) > 1:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(list(med.keys()), list(med.values()), "o-")
            ax.set_xlabel(xlabel)
            ax.set_ylabel("median post-Wiener SI-SNR (dB)")
            ax.set_title("Degradation sweep")
            ax.grid(alpha=0.3)
            fig.tight_layout()
            p = os.path.join(out_dir, fname)
            fig.savefig(p, dpi=120)
            plt.close(fig)
            written.append(p)

    sto = [r for r in base if r["stoi"] != ""]
    med = group_median(sto, lambda r: (r["surface"], r["stage"]), value="stoi")
    if med:
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = [f"{s}\n{st}" for s, st in med]
        ax.bar(range(len(med)), list(med.values()), color="#ee854a")
        ax.set_xticks(range(len(med)), labels, fontsize=8)
        ax.set_ylabel("median STOI")
        ax.set_ylim(0, 1)
        ax.set_title("Intelligibility per stage")
        fig.tight_layout()
        p = os.path.join(out_dir, "stage_stoi.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written
