import os
import time

import numpy as np
import pytest

from mousetap.cli import main
from mousetap.signal_core import Waveform, write_wav


@pytest.fixture
def tone_wav(tmp_path):
    rate = 48000
    t = np.arange(rate) / rate
    path = tmp_path / "tone.wav"
    write_wav(path, Waveform(0.5 * np.sin(2 * np.pi * 500 * t), rate))
    return path


def write_config(path, **kw):
    lines = [f"{k} = {v}" for k, v in kw.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_run_sweep_single_cell(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "exp.conf", input="sweep", surface="plastic",
                       out_dir=out, seed=3)
    assert main(["run", "--config", str(cfg)]) == 0
    rows = (out / "metrics.csv").read_text().strip().splitlines()
    assert rows[0] == "utterance,surface,jitter_us,noise_counts,stage,si_snr_db,stoi"
    assert len(rows) == 1 + 3  # surface, resampled, wiener
    files = os.listdir(out)
    assert sum(f.endswith(".wav") for f in files) == 2
    assert sum(f.endswith("_events.csv") for f in files) == 1


def test_run_grid_expansion(tmp_path, tone_wav):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "exp.conf", input=tone_wav, surface="plastic",
                       jitter_us="0,25,50,100", out_dir=out, seed=1)
    assert main(["run", "--config", str(cfg)]) == 0
    rows = (out / "metrics.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 4 * 3
    jitters = {r.split(",")[2] for r in rows[1:]}
    assert jitters == {"0", "25", "50", "100"}


def test_run_deterministic(tmp_path, tone_wav):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg = write_config(tmp_path / f"{name}.conf", input=tone_wav,
                           surface="plastic", out_dir=out, seed=7)
        assert main(["run", "--config", str(cfg)]) == 0
        texts.append((out / "metrics.csv").read_bytes())
    assert texts[0] == texts[1]


def test_run_missing_input_fails_before_processing(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "exp.conf", input="nope.wav", out_dir=out)
    assert main(["run", "--config", str(cfg)]) == 1
    assert not (out / "metrics.csv").exists()


def test_feasibility_pass_line(capsys):
    assert main(["feasibility", "--f", "8000", "--dpi", "20000",
                 "--wave-speed", "3000"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "pass"
    assert "nyquist limit: 4000 Hz" in out


def test_rank_mice_counts(capsys):
    assert main(["rank-mice", "--db", "default"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 + 26
    assert sum(",red," in l for l in lines) == 11


def test_score_identity_cap(tmp_path, tone_wav, capsys):
    assert main(["score", "--ref", str(tone_wav), "--est", str(tone_wav)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[-1].split(",")[2] == "60.000"


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["score", "--no-such-flag"])
    assert exc.value.code == 2


def test_simulate_reconstruct_roundtrip(tmp_path, tone_wav):
    events = tmp_path / "ev.csv"
    assert main(["simulate", "--audio", str(tone_wav), "--surface", "plastic",
                 "--seed", "2", "--out", str(events)]) == 0
    assert events.stat().st_size > 0
    wav_out = tmp_path / "recon.wav"
    mel_out = tmp_path / "recon.memt"
    assert main(["reconstruct", "--events", str(events), "--out", str(wav_out),
                 "--wiener", "--emit-mel", str(mel_out)]) == 0
    from mousetap.signal_core import read_wav
    from mousetap.tensorfile import read_tensor
    w = read_wav(wav_out)
    assert 0.9 <= w.duration <= 1.1
    arr = read_tensor(mel_out)
    assert arr.ndim == 3 and arr.shape[0] == 2 and arr.shape[1] == 80


def test_melspec_invert_cycle(tmp_path):
    rate = 16000
    t = np.arange(rate) / rate
    src = tmp_path / "in.wav"
    write_wav(src, Waveform(0.5 * np.sin(2 * np.pi * 440 * t), rate))
    mel = tmp_path / "in.memt"
    assert main(["melspec", "--wav", str(src), "--out", str(mel), "--mono"]) == 0
    assert main(["invert", str(mel), "--out-dir", str(tmp_path),
                 "--iterations", "30"]) == 0
    from mousetap.signal_core import read_wav
    back = read_wav(tmp_path / "in.wav")  # overwritten by invert output stem
    mags = np.abs(np.fft.rfft(back.samples))
    freqs = np.fft.rfftfreq(len(back.samples), 1 / rate)
    assert abs(freqs[np.argmax(mags)] - 440) < rate / 512 + 1


def test_report_renders_figures(tmp_path, tone_wav):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "exp.conf", input=tone_wav, surface="plastic",
                       jitter_us="0,50", out_dir=out, seed=1)
    assert main(["run", "--config", str(cfg)]) == 0
    assert main(["report", "--metrics", str(out / "metrics.csv")]) == 0
    pngs = [f for f in os.listdir(out) if f.endswith(".png")]
    assert "stage_si_snr.png" in pngs
    assert "degradation_jitter.png" in pngs


def test_upload_to_cli_collector(tmp_path):
    from mousetap.sensor_sim import EventStream
    from mousetap.telemetry import collector_serve, encode_csv

    sessions = tmp_path / "sessions"
    svc = collector_serve(("127.0.0.1", 0), sessions)
    try:
        ev = EventStream.from_packets([(100, 1, 2), (200, -3, 4)])
        events = tmp_path / "ev.csv"
        events.write_text(encode_csv(ev))
        host, port = svc.address
        assert main(["upload", "--server", f"{host}:{port}",
                     "--events", str(events)]) == 0
        deadline = time.time() + 5
        while time.time() < deadline:
            csvs = [f for f in os.listdir(sessions) if f.endswith(".csv")]
            if csvs:
                break
            time.sleep(0.05)
        assert (sessions / csvs[0]).read_text() == encode_csv(ev)
    finally:
        svc.close()


def test_upload_refused_exit_code(tmp_path):
    events = tmp_path / "ev.csv"
    events.write_text("100,1,1\n")
    import socket
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    host, port = s.getsockname()
    s.close()
    assert main(["upload", "--server", f"{host}:{port}",
                 "--events", str(events)]) == 1
