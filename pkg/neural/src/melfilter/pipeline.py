"""Dataset preparation and evaluation glue around the signal pipeline CLI.

Everything here talks to the `mousetap` tool through subprocess calls and
files only: clean clips go in as WAVs, paired spectrograms come back as
TensorFiles, reconstruction quality comes back as CSV rows.
"""

from __future__ import annotations

import csv
import os
import struct
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .tensorfile import read_tensor, write_tensor

CLIP_RATE = 16000
CLIP_SECONDS = 1.0

# ten distinct two-tone "words" inside the membrane's responsive band
WORD_TABLE = [
    (320, 740), (380, 980), (440, 620), (500, 1160), (560, 820),
    (640, 1040), (700, 460), (760, 1240), (850, 580), (950, 680),
]


def synth_word_clip(digit: int, rng: np.random.Generator,
                    rate: int = CLIP_RATE, seconds: float = CLIP_SECONDS) -> np.ndarray:
    """Two-tone word for a digit with per-clip detune/level variation."""
    f_a, f_b = WORD_TABLE[digit % len(WORD_TABLE)]
    n = int(seconds * rate)
    half = n // 2
    t1 = np.arange(half) / rate
    t2 = np.arange(n - half) / rate
    detune = 1.0 + rng.uniform(-0.03, 0.03)
    level = rng.uniform(0.55, 0.8)

    def segment(t, freq):
        env = np.sin(np.pi * np.arange(len(t)) / len(t)) ** 0.5
        return env * (np.sin(2 * np.pi * freq * detune * t)
                      + 0.35 * np.sin(2 * np.pi * 2 * freq * detune * t))

    clip = np.concatenate([segment(t1, f_a), segment(t2, f_b)])
    return (level * clip / np.max(np.abs(clip))).astype(np.float64)


def write_wav16(path, samples: np.ndarray, rate: int = CLIP_RATE) -> None:
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = (b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
              + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
              + b"data" + struct.pack("<I", len(payload)))
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_wav16(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a WAV file")
    pos = 12
    rate, data = None, None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            _, nch, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
    return x, rate


@dataclass
class PreparedDataset:
    root: str
    clips_dir: str
    run_dir: str
    labels: dict = field(default_factory=dict)  # stem -> digit

    @property
    def metrics_csv(self):
        return os.path.join(self.run_dir, "metrics.csv")

    def stems(self):
        return sorted(self.labels)


def prepare_dataset(out_dir, count: int = 200, seed: int = 0,
                    mousetap_bin: str = "mousetap", surface: str = "plastic",
                    noise_rms: float | None = 6e-4,
                    dpi: int = 20000, poll_rate_hz: int = 8000) -> PreparedDataset:
    """Generate labeled word clips and push them through the side channel.

    Writes clips/<stem>.wav + labels.csv, then invokes `mousetap run` once
    with mel export enabled; the run directory ends up holding the paired
    spectrograms (<stem>_*_mel.memt noisy / <stem>_clean.memt clean), the
    Wiener-stage WAVs and metrics.csv.
    """
    rng = np.random.default_rng(seed)
    clips_dir = os.path.join(out_dir, "clips")
    run_dir = os.path.join(out_dir, "run")
    os.makedirs(clips_dir, exist_ok=True)

    labels = {}
    paths = []
    for i in range(count):
        digit = i % 10
        stem = f"clip_{i:03d}"
        clip = synth_word_clip(digit, rng)
        write_wav16(os.path.join(clips_dir, stem + ".wav"), clip)
        labels[stem] = digit
        paths.append(os.path.join(clips_dir, stem + ".wav"))
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        fh.write("path,label\n")
        for stem in sorted(labels):
            fh.write(f"{stem},{labels[stem]}\n")

    config = os.path.join(out_dir, "channel.conf")
    with open(config, "w") as fh:
        fh.write(f"input = {','.join(paths)}\n")
        fh.write(f"surface = {surface}\n")
        if noise_rms is not None:
            fh.write(f"surface.noise_rms = {noise_rms}\n")
        fh.write(f"dpi = {dpi}\n")
        fh.write(f"poll_rate_hz = {poll_rate_hz}\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"out_dir = {run_dir}\n")
        fh.write("emit_mel = true\n")
    subprocess.run([mousetap_bin, "run", "--config", config], check=True,
                   capture_output=True, text=True)
    return PreparedDataset(out_dir, clips_dir, run_dir, labels)


def _mel_path(prep: PreparedDataset, stem: str) -> str:
    for name in os.listdir(prep.run_dir):
        if name.startswith(stem + "_") and name.endswith("_mel.memt"):
            return os.path.join(prep.run_dir, name)
    raise FileNotFoundError(f"no mel tensor for {stem} in {prep.run_dir}")


def load_pairs(prep: PreparedDataset):
    """[(stem, X (2,M,T), Y (1,M,T)), ...] with frame counts aligned."""
    out = []
    for stem in prep.stems():
        x = read_tensor(_mel_path(prep, stem))
        y = read_tensor(os.path.join(prep.run_dir, stem + "_clean.memt"))
        t = min(x.shape[-1], y.shape[-1])
        out.append((stem, x[..., :t], y[..., :t]))
    return out


def wiener_scores(prep: PreparedDataset) -> dict:
    """Per-clip Wiener-stage SI-SNR from the pipeline's metrics table."""
    scores = {}
    with open(prep.metrics_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["stage"] == "wiener":
                scores[row["utterance"]] = float(row["si_snr_db"])
    return scores


def wiener_wav_path(prep: PreparedDataset, stem: str) -> str:
    for name in os.listdir(prep.run_dir):
        if name.startswith(stem + "_") and name.endswith("_wiener.wav"):
            return os.path.join(prep.run_dir, name)
    raise FileNotFoundError(f"no wiener wav for {stem} in {prep.run_dir}")


def frame_skew(target_mel: np.ndarray, source_mel: np.ndarray,
               max_skew: int = 6) -> int:
    """Best frame offset aligning two (C, M, T) mel energy profiles."""
    et = np.exp(target_mel).sum(axis=(0, 1)) if target_mel.ndim == 3 \
        else np.exp(target_mel).sum(axis=0)
    es = np.exp(source_mel).sum(axis=(0, 1)) if source_mel.ndim == 3 \
        else np.exp(source_mel).sum(axis=0)
    best, best_k = -np.inf, 0
    for k in range(-max_skew, max_skew + 1):
        a = et[max(k, 0):]
        b = es[max(-k, 0):]
        n = min(len(a), len(b))
        if n < 8:
            continue
        aa = a[:n] - a[:n].mean()
        bb = b[:n] - b[:n].mean()
        c = float(np.dot(aa, bb) / (np.linalg.norm(aa) * np.linalg.norm(bb) + 1e-12))
        if c > best:
            best, best_k = c, k
    return best_k


def channel_lag(ref: np.ndarray, est: np.ndarray, max_lag: int = 480) -> int:
    """Integer-sample delay of est relative to ref (by peak |correlation|).

    The simulated channel carries a constant group delay (membrane resonator
    plus report quantization); compensating it the same way for every stage
    makes waveform SI-SNR comparisons meaningful.
    """
    n = min(len(ref), len(est))
    r = ref[:n] - ref[:n].mean()
    e = est[:n] - est[:n].mean()
    c = np.correlate(e, r, mode="full")
    mid = n - 1
    lo = max(0, mid - max_lag)
    hi = min(len(c), mid + max_lag + 1)
    return int(np.argmax(np.abs(c[lo:hi]))) + lo - mid


def _write_aligned_pair(ref: np.ndarray, est: np.ndarray, lag: int,
                        ref_out: str, est_out: str) -> None:
    n = min(len(ref), len(est))
    if lag >= 0:
        e, r = est[lag:n], ref[: n - lag]
    else:
        e, r = est[: n + lag], ref[-lag:n]
    write_wav16(ref_out, r)
    write_wav16(est_out, e)


def score_aligned(prep: PreparedDataset, estimates: dict, workdir, stage: str,
                  mousetap_bin: str = "mousetap") -> dict:
    """Delay-compensated SI-SNR of per-stem estimate WAVs vs clean clips.

    estimates: stem -> path to the estimate WAV. The channel lag is found
    locally, aligned copies are written, and the pipeline's `score` tool
    computes the metric rows.
    """
    os.makedirs(workdir, exist_ok=True)
    pairs_file = os.path.join(workdir, f"pairs_{stage}.csv")
    with open(pairs_file, "w", newline="") as fh:
        for stem, est_path in estimates.items():
            ref, _ = read_wav16(os.path.join(prep.clips_dir, stem + ".wav"))
            est, _ = read_wav16(est_path)
            lag = channel_lag(ref, est)
            ref_out = os.path.join(workdir, f"{stem}_{stage}_ref.wav")
            est_out = os.path.join(workdir, f"{stem}_{stage}_est.wav")
            _write_aligned_pair(ref, est, lag, ref_out, est_out)
            fh.write(f"{stem},{stage},{ref_out},{est_out}\n")
    scores_csv = os.path.join(workdir, f"scores_{stage}.csv")
    subprocess.run([mousetap_bin, "score", "--pairs", pairs_file,
                    "--csv", scores_csv], check=True, capture_output=True,
                   text=True)
    scores = {}
    with open(scores_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            scores[row["utterance"]] = float(row["si_snr_db"])
    return scores


def render_denoised(prep: PreparedDataset, denoised: dict, workdir,
                    mousetap_bin: str = "mousetap", iterations: int = 0) -> dict:
    """Render denoised spectrograms to WAVs, phase-seeded by each clip's
    Wiener-stage signal. denoised: stem -> (1, M, T). Returns stem -> wav.

    Griffin-Lim refinement stays off by default: with imperfect magnitude
    estimates the consistency iterations trade time alignment for spectral
    consistency and lose more than they gain."""
    os.makedirs(workdir, exist_ok=True)
    tensor_paths, phase_paths = [], []
    for stem, arr in denoised.items():
        x_mel = read_tensor(_mel_path(prep, stem))
        skew = frame_skew(arr, x_mel)
        trimmed = arr[..., max(skew, 0):] if skew > 0 else arr
        p = os.path.join(workdir, stem + "_denoised.memt")
        write_tensor(p, trimmed)
        tensor_paths.append(p)
        phase_paths.append(wiener_wav_path(prep, stem))
    subprocess.run([mousetap_bin, "invert", *tensor_paths,
                    "--out-dir", workdir, "--iterations", str(iterations),
                    "--phase-wav", *phase_paths],
                   check=True, capture_output=True, text=True)
    return {stem: os.path.join(workdir, stem + "_denoised.wav")
            for stem in denoised}
