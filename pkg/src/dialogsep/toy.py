"""Desk-scale toy corpora and training helpers for the learned stages.

Seeds below ``HELD_OUT_BASE`` are used for training; evaluation clips use
``HELD_OUT_BASE + i`` so the two never share source material.
"""
from __future__ import annotations

import os

import numpy as np

from . import synth
from .audio import AudioBuffer, stft
from .denoiser import DenoiserHyperparams, MaskPredictor, compute_band_features, oracle_irm, train_denoiser
from .gate import DialogClassifier, activity_decisions, train_classifier

HELD_OUT_BASE = 10000
CLIP_S = 10.0
CLASSIFIER_KINDS = ("background", "speech", "mix")


def classifier_clip(i: int, kind: str, seconds: float = CLIP_S):
    """(buffer, per-frame labels) for clip ``i`` of one kind.

    Labels come from the energy activity of the clean speech, or are all zero
    for background-only clips.
    """
    s = synth.speech(seconds, 1000 + i)
    lab = activity_decisions(s).decision
    if kind == "background":
        return synth.background(seconds, 2000 + i), np.zeros_like(lab)
    sp = np.vstack([s.samples[0] * np.cos(np.pi / 4)] * 2)
    if kind == "speech":
        return AudioBuffer(sp, s.sample_rate, "dialog"), lab
    if kind != "mix":
        raise ValueError(f"unknown clip kind {kind!r}")
    b = synth.background(seconds, 2000 + i)
    dnr = np.random.default_rng(i).uniform(-2.0, 12.0)
    g = 10 ** (dnr / 20) * np.sqrt(np.mean(b.samples ** 2) / (np.mean(sp ** 2) + 1e-12))
    return AudioBuffer(0.5 * g * sp + b.samples, s.sample_rate, "mix"), lab


def train_toy_classifier(n_per_kind: int = 12, seed: int = 0) -> DialogClassifier:
    clips, labels = [], []
    for i in range(n_per_kind):
        for kind in CLASSIFIER_KINDS:
            c, lab = classifier_clip(seed * 1000 + i, kind)
            clips.append(c)
            labels.append(lab)
    return train_classifier(clips, labels, seed=seed)


def separation_clip(i: int, seconds: float = CLIP_S):
    """Stereo (dialog, background) stems: dialog centered or at a random pan
    (40%), background a stereo synthetic bed, DNR drawn from [-5, 10] dB by RMS.
    """
    rng = np.random.default_rng(i)
    s = synth.speech(seconds, 3000 + i)
    b = synth.background(seconds, 4000 + i)
    a = rng.uniform(0, np.pi / 2) if rng.uniform() < 0.4 else np.pi / 4
    d = np.vstack([np.cos(a) * s.samples[0], np.sin(a) * s.samples[0]])
    g = 10 ** (rng.uniform(-5, 10) / 20) * np.sqrt(np.mean(b.samples ** 2) / np.mean(d ** 2))
    return AudioBuffer(d * g, s.sample_rate, "dialog"), b


def denoiser_example(i: int, seconds: float = CLIP_S):
    """(mix features, oracle IRM target) for separation clip ``i``."""
    d, b = separation_clip(i, seconds)
    x = stft(AudioBuffer(d.samples + b.samples, d.sample_rate, "mix"))
    return compute_band_features(x), oracle_irm(stft(d), stft(b))


def denoiser_corpus(n: int, held_out: bool = False):
    base = HELD_OUT_BASE if held_out else 0
    return [denoiser_example(base + i) for i in range(n)]


def train_toy_denoiser(n_clips: int = 16, seed: int = 0, hyperparams: DenoiserHyperparams | None = None,
                       log=None) -> MaskPredictor:
    return train_denoiser(denoiser_corpus(n_clips), hyperparams or DenoiserHyperparams(), seed=seed, log=log)


def band_mask_mse(predictor: MaskPredictor, corpus) -> tuple[float, float]:
    """(predictor MSE, all-ones MSE) against the oracle IRM over ``corpus``."""
    from .denoiser import predict_band_mask
    err = [np.mean((predict_band_mask(predictor, f).values - m.values) ** 2) for f, m in corpus]
    ones = [np.mean((1.0 - m.values) ** 2) for _, m in corpus]
    return float(np.mean(err)), float(np.mean(ones))


DENOISER_FILE = "denoiser.npz"
CLASSIFIER_FILE = "classifier.npz"


def model_paths(model_dir):
    return os.path.join(model_dir, DENOISER_FILE), os.path.join(model_dir, CLASSIFIER_FILE)
