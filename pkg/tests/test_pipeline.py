import numpy as np
import pytest

from dialogsep import synth
from dialogsep.audio import AudioBuffer, AudioError
from dialogsep.denoiser import MaskPredictor
from dialogsep.evaluation import si_sdr
from dialogsep.gate import DialogDecisions
from dialogsep.loudness import integrated_loudness
from dialogsep.pipeline import (PipelineConfig, align_loudness, boost_gain_from_db, enhance, latency_report,
                                mix_boosted, separate, separate_dialog, with_classifier_input)
from dialogsep.toy import HELD_OUT_BASE, classifier_clip, separation_clip

FS = 48000


def test_boost_values():
    assert boost_gain_from_db(12).g == pytest.approx(2.98107, abs=1e-5)
    assert boost_gain_from_db(6).g == pytest.approx(0.99526, abs=1e-5)
    assert boost_gain_from_db(0).g == 0.0
    gs = [boost_gain_from_db(x).g for x in np.linspace(-40, 40, 81)]
    assert all(a < b for a, b in zip(gs, gs[1:]))
    with pytest.raises(ValueError):
        boost_gain_from_db(np.inf)


def test_mix_boosted_algebra(rng):
    d = rng.standard_normal((2, 1000))
    b = rng.standard_normal((2, 1000))
    x = AudioBuffer(d + b, FS)
    dd = AudioBuffer(d, FS)
    assert np.array_equal(mix_boosted(x, dd, boost_gain_from_db(0)).samples, x.samples)
    g = boost_gain_from_db(12)
    np.testing.assert_allclose(mix_boosted(x, dd, g).samples, (g.g + 1) * d + b, atol=1e-12)
    removal = mix_boosted(x, dd, type(g)(float("-inf"), -1.0))
    np.testing.assert_allclose(removal.samples, b, atol=1e-12)
    with pytest.raises(AudioError):
        mix_boosted(x, AudioBuffer(d[:, :999], FS), g)


def test_boost_monotone_per_sample(rng):
    x = AudioBuffer(rng.standard_normal((2, 500)), FS)
    d = AudioBuffer(rng.standard_normal((2, 500)), FS)
    prev = np.zeros((2, 500))
    for g_db in np.linspace(0, 24, 13):
        dev = np.abs(mix_boosted(x, d, boost_gain_from_db(g_db)).samples - x.samples)
        assert np.all(dev >= prev - 1e-12)
        prev = dev


def test_bypass_all_is_identity(rng):
    x = AudioBuffer(rng.uniform(-0.5, 0.5, (2, 3 * FS)), FS)
    y = separate_dialog(x, PipelineConfig.bypass_all())
    assert y.samples.shape == x.samples.shape
    mid = slice(4096, -4096)
    err = np.sum((y.samples - x.samples)[:, mid] ** 2) / np.sum(x.samples[:, mid] ** 2)
    assert 10 * np.log10(err) < -80


def test_gate_needs_classifier(rng):
    x = AudioBuffer(rng.standard_normal((2, FS)), FS)
    with pytest.raises(ValueError):
        separate(x, PipelineConfig(bypass_slf=True))
    with pytest.raises(AudioError):
        separate(AudioBuffer(rng.standard_normal(FS), FS), PipelineConfig(bypass_gate=True))


def test_align_loudness_shift():
    x = AudioBuffer(synth.speech(6.0, 8).samples, FS)
    x = x.scaled(10 ** ((-21 - integrated_loudness(x).lkfs) / 20))
    assert integrated_loudness(x).lkfs == pytest.approx(-21.0, abs=1e-9)
    y = align_loudness(x, -31.0)
    assert 20 * np.log10(y.samples.max() / x.samples.max()) == pytest.approx(-10.0, abs=1e-9)
    assert integrated_loudness(y).lkfs == pytest.approx(-31.0, abs=0.1)
    # fixed point
    assert np.allclose(align_loudness(y, -31.0).samples, y.samples, rtol=1e-9)


def test_align_loudness_uses_speech_frames():
    t = np.arange(8 * FS) / FS
    x = np.where(t < 4, 0.3, 0.03) * np.sin(2 * np.pi * 440 * t)
    n = -(-len(x) // 1024)
    dec = np.zeros(n)
    dec[n // 2 + 10:] = 1
    y = align_loudness(AudioBuffer(x, FS), -31.0, DialogDecisions(dec, dec, 1024))
    active = DialogDecisions(dec, dec, 1024)
    assert integrated_loudness(y, "speech-gated", active).lkfs == pytest.approx(-31.0, abs=0.1)


def test_align_silence_fails():
    with pytest.raises(AudioError, match="unmeasurable"):
        align_loudness(AudioBuffer(np.zeros((2, FS)), FS))


def test_latency_modes():
    cfg = PipelineConfig()
    mix = latency_report(cfg)
    proc = latency_report(with_classifier_input(cfg, "processed"))
    assert mix.total == max(mix.chain, mix.classifier)
    assert proc.total == proc.chain + proc.classifier >= mix.total
    assert mix.slf == (cfg.slf.buffer_frames - 1) * cfg.stft.hop + cfg.stft.frame_len
    off = latency_report(PipelineConfig.bypass_all())
    assert off.total == off.stft == cfg.stft.frame_len and off.slf == 0 and off.classifier == 0


def test_oracle_irm_beats_mix():
    d, b = separation_clip(HELD_OUT_BASE)
    mix = AudioBuffer(d.samples + b.samples, FS)
    from dialogsep.audio import stft
    den = MaskPredictor.from_oracle(stft(d), stft(b))
    cfg = PipelineConfig(denoiser=den, bypass_slf=True, bypass_gate=True)
    assert si_sdr(separate_dialog(mix, cfg), d) > si_sdr(mix, d)


def test_scale_invariance_without_gate():
    d, b = separation_clip(HELD_OUT_BASE + 1, seconds=4.0)
    mix = AudioBuffer(d.samples + b.samples, FS)
    cfg = PipelineConfig(bypass_gate=True)
    base = separate_dialog(mix, cfg).samples
    for db in (-20.0, 20.0):
        k = 10 ** (db / 20)
        y = separate_dialog(mix.scaled(k), cfg).samples
        rel = np.sqrt(np.sum((y - k * base) ** 2) / np.sum((k * base) ** 2))
        assert rel < 1e-6, db


def test_background_only_is_gated(toy_classifier):
    bg, _ = classifier_clip(HELD_OUT_BASE + 5, "background")
    cfg = PipelineConfig(classifier=toy_classifier.value)
    y = separate_dialog(bg, cfg)
    e_in, e_out = np.sum(bg.samples ** 2), np.sum(y.samples ** 2)
    assert e_out == 0.0 or 10 * np.log10(e_out / e_in) <= -40


def test_enhance_end_to_end(toy_classifier):
    d, b = separation_clip(HELD_OUT_BASE + 2, seconds=5.0)
    mix = AudioBuffer(d.samples + b.samples, FS)
    cfg = PipelineConfig(classifier=toy_classifier.value)
    y, sep = enhance(mix, cfg, boost_gain_from_db(12))
    assert y.samples.shape == mix.samples.shape and sep.gate is not None
    lk = integrated_loudness(y, "speech-gated", sep.decisions) if sep.decisions.decision.any() \
        else integrated_loudness(y)
    assert lk.lkfs == pytest.approx(-31.0, abs=0.1)
