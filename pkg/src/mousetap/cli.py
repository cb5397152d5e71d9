"""Command-line interface: thin bindings of the library operations.

Exit codes: 0 success, 1 processing failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import experiment, feasibility, metrics, reconstruct, telemetry, tensorfile
from .errors import MousetapError
from .sensor_sim import (SensorConfig, inject_count_noise,
                         inject_timing_jitter, simulate_sensor,
                         surface_response)
from .signal_core import SweepSpec, Waveform, generate_tone_sweep, read_wav, write_wav

log = logging.getLogger("mousetap")


def _sensor_from_args(args) -> SensorConfig:
    return SensorConfig(dpi=args.dpi, poll_rate_hz=args.poll_rate,
                        ips_cap=args.ips_cap, count_saturation=args.saturation)


def _add_sensor_flags(p):
    p.add_argument("--dpi", type=int, default=20000)
    p.add_argument("--poll-rate", type=int, default=8000)
    p.add_argument("--ips-cap", type=float, default=650.0)
    p.add_argument("--saturation", type=int, default=127)


def _host_port(text: str):
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_simulate(args) -> int:
    if args.audio:
        audio = read_wav(args.audio)
        if audio.channels > 1:
            audio = Waveform(audio.samples.mean(axis=1), audio.sample_rate)
    else:
        audio = generate_tone_sweep(SweepSpec())
    sensor = _sensor_from_args(args)
    sim_rate = experiment._simulation_rate(audio.sample_rate, sensor.poll_rate_hz)
    if audio.sample_rate != sim_rate:
        from .signal_core import resample_uniform
        audio = resample_uniform(audio, sim_rate)
    surface = experiment.surface_by_name(args.surface)
    disp = surface_response(audio, surface, seed=args.seed)
    ev = simulate_sensor(disp, sensor, args.clock_jitter_us, args.seed)
    if args.jitter_us:
        ev = inject_timing_jitter(ev, args.jitter_us, args.seed + 1)
    if args.noise_counts:
        ev = inject_count_noise(ev, args.noise_counts, args.seed + 2)
    with open(args.out, "w", newline="") as fh:
        fh.write(telemetry.encode_csv(ev))
    print(f"{len(ev)} packets -> {args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    with open(args.events) as fh:
        ev = telemetry.decode_csv(fh.read())
    w = reconstruct.events_to_signal(ev, args.target_rate)
    if args.trim_db is not None:
        w = reconstruct.trim_silence(w, args.trim_db)
    if args.wiener:
        prior = (reconstruct.read_speech_prior(args.prior) if args.prior
                 else reconstruct.default_speech_prior())
        if args.noise_profile:
            nprof = reconstruct.read_noise_profile(args.noise_profile)
        else:
            nprof = reconstruct.NoiseProfile(
                np.zeros(prior.fft_size // 2 + 1), prior.fft_size, args.target_rate)
        w = reconstruct.wiener_filter(w, nprof, prior)
    write_wav(args.out, w)
    if args.emit_mel:
        mel = reconstruct.log_mel_spectrogram(w, args.mel_bins)
        tensorfile.write_tensor(args.emit_mel, mel.frames.transpose(0, 2, 1))
    print(f"{len(ev)} packets -> {args.out} ({w.duration:.2f}s)")
    return 0


def cmd_score(args) -> int:
    pairs = []
    if args.pairs:
        with open(args.pairs) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    utt, stage, ref, est = line.split(",")
                    pairs.append((utt, stage, ref, est))
    else:
        pairs.append((args.utterance, args.stage, args.ref, args.est))
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        out.write("utterance,stage,si_snr_db,stoi\n")
        for utt, stage, ref_path, est_path in pairs:
            ref, est = read_wav(ref_path), read_wav(est_path)
            n = min(len(ref.samples), len(est.samples))
            snr = metrics.si_snr(ref.samples[:n], est.samples[:n])
            try:
                st = f"{metrics.stoi(ref.samples[:n], est.samples[:n], ref.sample_rate):.4f}"
            except MousetapError:
                st = ""
            out.write(f"{utt},{stage},{snr:.3f},{st}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_feasibility(args) -> int:
    q = feasibility.FeasibilityQuery(args.f, args.dpi, args.poll_rate,
                                     args.wave_speed)
    verdict = feasibility.dpi_wavelength_check(q)
    print("pass" if verdict.passed else "fail")
    print(f"margin: {verdict.margin:.6g}")
    print(f"wavelength: {verdict.wavelength_mm:.6g} mm, "
          f"min step: {verdict.min_step_mm:.6g} mm")
    print(f"nyquist limit: {feasibility.nyquist_limit(args.poll_rate):g} Hz")
    print(f"phoneme coverage: {feasibility.phoneme_coverage(args.poll_rate):.2f}%")
    return 0


def cmd_rank_mice(args) -> int:
    db = None if args.db == "default" else feasibility.load_mouse_db(args.db)
    ranked = feasibility.rank_mice(db)
    lines = ["vendor_model,sensor,dpi,poll_rate_hz,class,coverage_pct"]
    for r in ranked:
        m = r.record
        lines.append(f"{m.vendor_model},{m.sensor},{m.dpi:g},{m.poll_rate_hz:g},"
                     f"{r.vulnerability},{r.coverage_pct:.2f}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_collect(args) -> int:
    service = telemetry.collector_serve(_host_port(args.bind), args.out_dir)
    print(f"collector listening on {service.address}, writing to {args.out_dir}")
    try:
        service._thread.join()
    except KeyboardInterrupt:
        print("stopping")
        service.close()
    return 0


def cmd_upload(args) -> int:
    with open(args.events) as fh:
        ev = telemetry.decode_csv(fh.read())
    hdr = telemetry.SessionHeader.new(
        SensorConfig(dpi=args.dpi, poll_rate_hz=args.poll_rate,
                     count_saturation=args.saturation))
    telemetry.collector_upload(_host_port(args.server), hdr, ev)
    print(f"uploaded {len(ev)} packets as session {hdr.session_hex}")
    return 0


def cmd_run(args) -> int:
    cfg = experiment.load_config(args.config)
    code = experiment.run(cfg)
    if args.figures:
        experiment.render_report(os.path.join(cfg.out_dir, "metrics.csv"))
    return code


def cmd_report(args) -> int:
    written = experiment.render_report(args.metrics, args.out_dir)
    for path in written:
        print(path)
    return 0


def cmd_melspec(args) -> int:
    w = read_wav(args.wav)
    if args.mono and w.channels > 1:
        w = Waveform(w.samples.mean(axis=1), w.sample_rate)
    mel = reconstruct.log_mel_spectrogram(w, args.mel_bins)
    tensorfile.write_tensor(args.out, mel.frames.transpose(0, 2, 1))
    print(f"{args.out}: dims {mel.frames.transpose(0, 2, 1).shape}")
    return 0


def cmd_invert(args) -> int:
    for idx, path in enumerate(args.tensors):
        arr = tensorfile.read_tensor(path)  # (C, M, T)
        if arr.ndim != 3 or arr.shape[0] != 1:
            raise MousetapError(f"{path}: expected dims (1, M, T), got {arr.shape}")
        spec = reconstruct.Spectrogram(arr.transpose(0, 2, 1).astype(np.float64),
                                       arr.shape[1], args.win_ms, args.hop_ms,
                                       args.rate, channels=1)
        phase_from = None
        if args.phase_wav:
            if len(args.phase_wav) not in (1, len(args.tensors)):
                raise MousetapError("--phase-wav needs one file or one per tensor")
            src = args.phase_wav[idx if len(args.phase_wav) > 1 else 0]
            phase_from = read_wav(src)
            if phase_from.sample_rate != args.rate:
                from .signal_core import resample_uniform
                phase_from = resample_uniform(phase_from, args.rate)
        w = reconstruct.invert_spectrogram(spec, args.iterations, args.seed,
                                           phase_from=phase_from)
        if args.out:
            out_path = args.out
        else:
            stem = os.path.splitext(os.path.basename(path))[0]
            out_path = os.path.join(args.out_dir, stem + ".wav")
        peak = float(np.max(np.abs(w.samples))) if len(w.samples) else 0.0
        if peak > 1.0:  # keep the 16-bit writer from clipping
            w = Waveform(w.samples / peak, w.sample_rate)
        write_wav(out_path, w)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mousetap",
        description="Mouse-sensor acoustic side channel: simulate, exfiltrate, "
                    "reconstruct, evaluate.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="audio -> surface -> sensor -> events CSV")
    p.add_argument("--audio", help="input WAV (default: built-in tone-and-sweep)")
    p.add_argument("--surface", default="plastic")
    _add_sensor_flags(p)
    p.add_argument("--clock-jitter-us", type=float, default=0.0,
                   help="poll clock jitter inside the sensor")
    p.add_argument("--jitter-us", type=float, default=0.0,
                   help="post-hoc timing jitter injected into the log")
    p.add_argument("--noise-counts", type=float, default=0.0,
                   help="post-hoc count noise injected into the log")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="events CSV -> waveform")
    p.add_argument("--events", required=True)
    p.add_argument("--target-rate", type=int, default=16000)
    p.add_argument("--trim-db", type=float, default=None)
    p.add_argument("--wiener", action="store_true")
    p.add_argument("--noise-profile")
    p.add_argument("--prior")
    p.add_argument("--emit-mel", help="also write the log-mel TensorFile here")
    p.add_argument("--mel-bins", type=int, default=80)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("score", help="SI-SNR and STOI between two WAVs")
    p.add_argument("--ref")
    p.add_argument("--est")
    p.add_argument("--utterance", default="utt")
    p.add_argument("--stage", default="est")
    p.add_argument("--pairs", help="batch file: utterance,stage,ref,est per line")
    p.add_argument("--csv", help="write rows here instead of stdout")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("feasibility", help="wavelength/DPI check and Nyquist bound")
    p.add_argument("--f", type=float, required=True, help="acoustic frequency, Hz")
    p.add_argument("--dpi", type=float, required=True)
    p.add_argument("--poll-rate", type=float, default=8000)
    p.add_argument("--wave-speed", type=float, default=3000.0, help="m/s")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("rank-mice", help="classify the mouse database")
    p.add_argument("--db", default="default")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_rank_mice)

    p = sub.add_parser("collect", help="run the telemetry collector service")
    p.add_argument("--bind", default="127.0.0.1:9310")
    p.add_argument("--out-dir", default="sessions")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("upload", help="send an events CSV to a collector")
    p.add_argument("--server", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--dpi", type=int, default=20000)
    p.add_argument("--poll-rate", type=int, default=8000)
    p.add_argument("--saturation", type=int, default=127)
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--figures", action="store_true",
                   help="render report figures after the run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render figures from a metrics.csv")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("melspec", help="WAV -> log-mel TensorFile")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mono", action="store_true")
    p.add_argument("--mel-bins", type=int, default=80)
    p.set_defaults(func=cmd_melspec)

    p = sub.add_parser("invert", help="log-mel TensorFile -> WAV (Griffin-Lim)")
    p.add_argument("tensors", nargs="+")
    p.add_argument("--out", help="output WAV (single input only)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--win-ms", type=float, default=25.0)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--iterations", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phase-wav", nargs="+",
                   help="seed phases/spectral shape from these aligned WAVs "
                        "(one file, or one per tensor)")
    p.set_defaults(func=cmd_invert)

    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="[%(asctime)s] %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MousetapError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
