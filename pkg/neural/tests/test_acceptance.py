"""Acceptance gate for the neural stage (secondary component).

Each criterion prints a `CRITERION <n> ... PASS/FAIL` line. The datasets are
synthesized through the signal pipeline's CLI (`mousetap`), which must be on
PATH; everything crosses the component boundary as files.
"""

import math
import shutil
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from melfilter.model import KeywordClassifier, gradient_check, lr_at_epoch
from melfilter.pipeline import (load_pairs, prepare_dataset, render_denoised,
                                score_aligned, wiener_wav_path)
from melfilter.train import (DenoiserHyperparams, classify_array,
                             denoise_array, split_indices, stratified_split,
                             train_denoiser, train_digit_classifier)

MOUSETAP = shutil.which("mousetap")
pytestmark = pytest.mark.skipif(MOUSETAP is None,
                                reason="mousetap CLI not installed")


@contextmanager
def criterion(num, label):
    t0 = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"CRITERION {num:2d} [{label}]: FAIL")
        raise
    print(f"CRITERION {num:2d} [{label}]: PASS ({time.perf_counter() - t0:.1f}s)")


@pytest.fixture(scope="module")
def denoise_dataset(tmp_path_factory):
    # harsh channel: plenty of in-band sensor noise for the denoiser to remove
    root = tmp_path_factory.mktemp("denoise_data")
    return prepare_dataset(root, count=200, seed=0, noise_rms=3e-3,
                           mousetap_bin=MOUSETAP)


@pytest.fixture(scope="module")
def classify_dataset(tmp_path_factory):
    # moderate channel for the keyword task
    root = tmp_path_factory.mktemp("classify_data")
    return prepare_dataset(root, count=200, seed=5, noise_rms=6e-4,
                           mousetap_bin=MOUSETAP)


def test_criterion_12_denoiser_training(denoise_dataset, tmp_path):
    with criterion(12, "denoiser training + reconstruction gain"):
        t0 = time.perf_counter()
        prep = denoise_dataset
        trips = load_pairs(prep)
        pairs = [(x, y) for _, x, y in trips]
        stems = [s for s, _, _ in trips]

        hp = DenoiserHyperparams()  # the full recipe: 30 epochs, lr 1e-3
        model, log = train_denoiser(pairs, hp, seed=0)
        assert log[-1]["val_loss"] <= 0.5 * log[0]["val_loss"], (
            f"val loss {log[0]['val_loss']:.3f} -> {log[-1]['val_loss']:.3f}")

        _, val_idx = split_indices(len(pairs), seed=0)
        val_stems = [stems[i] for i in val_idx]
        denoised = {s: denoise_array(pairs[i][0], model)
                    for s, i in zip(val_stems, val_idx)}

        # render through the pipeline CLI (phase-seeded by the Wiener stage)
        # and score both stages with the channel group delay compensated the
        # same way, so the comparison is about content rather than offset
        wavs = render_denoised(prep, denoised, tmp_path / "render",
                               mousetap_bin=MOUSETAP)
        neural = score_aligned(prep, wavs, tmp_path / "scores", "neural",
                               mousetap_bin=MOUSETAP)
        wiener = score_aligned(prep, {s: wiener_wav_path(prep, s)
                                      for s in val_stems},
                               tmp_path / "scores", "wiener",
                               mousetap_bin=MOUSETAP)
        n_med = float(np.median(list(neural.values())))
        w_med = float(np.median([wiener[s] for s in neural]))
        assert n_med >= w_med + 3.0, f"neural {n_med:.2f} vs wiener {w_med:.2f}"
        assert time.perf_counter() - t0 < 20 * 60


def test_criterion_13_gradient_check_and_schedule():
    with criterion(13, "gradient check + lr schedule"):
        assert gradient_check(seed=0) <= 1e-3
        gamma = 1.0 / math.sqrt(2.0)
        for epoch in range(31):
            expected = 0.001 * gamma ** (epoch // 5)
            assert lr_at_epoch(0.001, epoch) == pytest.approx(expected, rel=1e-12)
        assert lr_at_epoch(0.001, 10) == pytest.approx(0.0005, abs=1e-15)


def test_criterion_14_digit_classifier(classify_dataset):
    with criterion(14, "toy digit classifier"):
        prep = classify_dataset
        examples = [(x, prep.labels[s]) for s, x, _ in load_pairs(prep)]
        labels = [l for _, l in examples]
        train_idx, test_idx = stratified_split(labels, seed=7)
        train_ex = [examples[i] for i in train_idx]
        test_ex = [examples[i] for i in test_idx]

        model, _ = train_digit_classifier(train_ex, seed=7)
        held = np.mean([classify_array(x, model) == y for x, y in test_ex])
        assert held >= 0.30, f"held-out accuracy {held:.2f}"

        accs = []
        for seed in range(5):
            torch.manual_seed(seed)
            blank = KeywordClassifier(80, 10, in_channels=2)
            accs.append(np.mean([classify_array(x, blank) == y
                                 for x, y in examples]))
        assert abs(float(np.mean(accs)) - 0.10) <= 0.05
