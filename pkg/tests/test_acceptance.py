"""One test per acceptance criterion; each records a pass/fail line printed
in the terminal summary (see conftest.py)."""
import os
import time

import numpy as np
import pytest

from conftest import full_corpus_enabled, record_acceptance
from dialogsep import dataset as ds
from dialogsep.audio import AudioBuffer, istft, mel_layout, read_wav, stft
from dialogsep.denoiser import MaskPredictor
from dialogsep.evaluation import correlation_p, si_sdr, spearman
from dialogsep.gate import DialogDecisions, GateConfig, activity_decisions, decisions_to_gate, hysteresis
from dialogsep.loudness import integrated_loudness
from dialogsep.nn import UNet, numeric_gradient
from dialogsep.pipeline import (PipelineConfig, align_loudness, boost_gain_from_db, latency_report, mix_boosted,
                                separate_dialog, with_classifier_input)
from dialogsep.slf import SlfConfig, apply_mask, slf_mask
from dialogsep.toy import HELD_OUT_BASE, band_mask_mse, classifier_clip

FS = 48000


def _finish(number, title, checks, seconds, budget):
    """checks: list of (name, ok, detail)."""
    checks = checks + [("runtime", seconds < budget, f"{seconds:.1f} s < {budget} s")]
    passed = all(ok for _, ok, _ in checks)
    detail = "; ".join(f"{n}: {d}" + ("" if ok else " [FAILED]") for n, ok, d in checks)
    record_acceptance(number, title, passed, detail, seconds)
    assert passed, detail


def test_criterion_1_boost_algebra():
    t = time.perf_counter()
    rng = np.random.default_rng(1)
    g = boost_gain_from_db(12)
    d = rng.standard_normal((2, FS))
    b = rng.standard_normal((2, FS))
    y = mix_boosted(AudioBuffer(d + b, FS), AudioBuffer(d, FS), g).samples
    err = np.max(np.abs(y - ((g.g + 1) * d + b)))
    checks = [("g(12 dB)", abs(g.g - 2.98107) <= 1e-5, f"g = {g.g:.6f}"),
              ("y = (g+1)d + b", err < 1e-12, f"max error {err:.1e}")]
    _finish(1, "boost algebra", checks, time.perf_counter() - t, 1.0)


def test_criterion_2_stft_identity():
    t = time.perf_counter()
    x = AudioBuffer(np.random.default_rng(2).uniform(-0.5, 0.5, (2, 10 * FS)), FS)
    y = separate_dialog(x, PipelineConfig.bypass_all())
    mid = slice(4096, -4096)
    err_db = 10 * np.log10(np.sum((y.samples - x.samples)[:, mid] ** 2) / np.sum(x.samples[:, mid] ** 2))
    checks = [("length", len(y) == len(x), f"{len(y)} samples"),
              ("interior error", err_db < -80, f"{err_db:.1f} dB")]
    _finish(2, "bypassed pipeline is identity", checks, time.perf_counter() - t, 5.0)


def test_criterion_3_correlation_anchors():
    t = time.perf_counter()
    checks = []
    for r, p in ((.89, .001), (.85, .002), (.81, .004)):
        v = correlation_p(r, 10)
        checks.append((f"p(r={r}, n=10)", round(v, 3) == p, f"{v:.5f} rounds to {round(v, 3)}, expected {p}"))
    ranks = np.arange(1, 11)
    rho = spearman(ranks, ranks[::-1])
    checks.append(("spearman reversed", rho.r == pytest.approx(-1.0), f"rho = {rho.r:.6f}, p = {rho.p:.3g}"))
    _finish(3, "correlation anchors", checks, time.perf_counter() - t, 1.0)


def test_criterion_4_loudness(small_corpus):
    out, entries = small_corpus.value
    t = time.perf_counter()
    x = np.zeros((2, 10 * FS))
    x[0] = np.sin(2 * np.pi * 997 * np.arange(10 * FS) / FS)
    tone = integrated_loudness(AudioBuffer(x, FS), "gated").lkfs
    checks = [("997 Hz full-scale sine", abs(tone - (-3.69)) <= 0.1, f"{tone:.3f} LKFS vs -3.69")]
    speech = read_wav(os.path.join(out, entries[0].dialog_path))
    base = integrated_loudness(speech).lkfs
    lin = max(abs(integrated_loudness(speech.scaled(10 ** (k / 20))).lkfs - base - k) for k in (-20, -6, 6))
    checks.append(("gain linearity", lin <= 0.01, f"max deviation {lin:.2e} LU"))
    worst = 0.0
    for e in entries[:20]:
        mix = read_wav(os.path.join(out, e.mix_path))
        dec = activity_decisions(read_wav(os.path.join(out, e.dialog_path)))
        y = align_loudness(mix, -31.0, dec)
        worst = max(worst, abs(integrated_loudness(y, "speech-gated", dec).lkfs + 31.0))
    checks.append(("alignment to -31 LKFS", worst <= 0.1, f"20 clips, worst error {worst:.2e} LU"))
    _finish(4, "loudness", checks, time.perf_counter() - t, 30.0)


def test_criterion_5_dataset(small_corpus, tmp_path_factory):
    out, entries = small_corpus.value
    t = time.perf_counter()
    default = ds.plan_dataset(ds.DatasetPlan(), *ds.synthetic_pools(128, 32))
    kinds = [e.pan_kind for e in default[::3]]
    counts = (kinds.count("center"), kinds.count("static"), kinds.count("moving"))
    lengths = {int(round(e.clip_seconds * e.sample_rate)) for e in default}
    checks = [("default plan size", len(default) == 384, f"{len(default)} clips"),
              ("clip length", lengths == {480000}, f"{sorted(lengths)} samples"),
              ("pan counts", counts == (77, 38, 13), f"{counts}")]
    rendered = entries
    label = "16-item corpus"
    if full_corpus_enabled():
        full = tmp_path_factory.mktemp("full_corpus")
        rendered = ds.render_dataset(default, full)
        out, label = full, "128-item corpus"
    bad_dnr = [e.clip_id for e in rendered if abs(e.measured_dnr_db - e.target_dnr_db) > 0.5]
    checks.append(("DNR within 0.5 dB", not bad_dnr, f"{len(rendered) - len(bad_dnr)}/{len(rendered)} clips ({label})"))
    bad_sum, bad_len = [], []
    for e in rendered:
        m = read_wav(os.path.join(out, e.mix_path)).samples.astype(np.float32)
        d = read_wav(os.path.join(out, e.dialog_path)).samples.astype(np.float32)
        b = read_wav(os.path.join(out, e.background_path)).samples.astype(np.float32)
        if not np.array_equal(m, d + b):
            bad_sum.append(e.clip_id)
        if m.shape[1] != 480000:
            bad_len.append(e.clip_id)
    checks.append(("mix = dialog + background", not bad_sum, f"{len(rendered) - len(bad_sum)} exact"))
    checks.append(("rendered length", not bad_len, f"{len(rendered) - len(bad_len)} at 480000 samples"))
    seconds = time.perf_counter() - t + (0 if full_corpus_enabled() else small_corpus.seconds)
    _finish(5, "dataset recipe", checks, seconds, 300.0)


def test_criterion_6_oracle_dominance(small_corpus):
    out, entries = small_corpus.value
    t = time.perf_counter()
    gains = []
    for e in entries[::3]:
        mix = read_wav(os.path.join(out, e.mix_path))
        d = read_wav(os.path.join(out, e.dialog_path))
        b = read_wav(os.path.join(out, e.background_path))
        cfg = PipelineConfig(denoiser=MaskPredictor.from_oracle(stft(d), stft(b)), bypass_gate=True)
        gains.append(si_sdr(separate_dialog(mix, cfg), d) - si_sdr(mix, d))
    checks = [("oracle IRM beats mix", min(gains) > 0,
               f"{sum(g > 0 for g in gains)}/{len(gains)} clips, min gain {min(gains):.2f} dB")]
    center = [e for e in entries if e.pan_kind == "center"][:16]
    imps = []
    for e in center:
        mix, d, _ = ds.render_mix(e, background_pan=0.0)
        spec = stft(mix)
        est = istft(apply_mask(spec, slf_mask(spec, SlfConfig())))
        imps.append(si_sdr(est, d) - si_sdr(mix, d))
    med = float(np.median(imps))
    checks.append(("SLF median improvement", med >= 3.0, f"{med:.2f} dB over {len(imps)} clips"))
    _finish(6, "separation oracle dominance", checks, time.perf_counter() - t, 300.0)


def test_criterion_7_learned_components(toy_denoiser):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    net = UNet.init((2, 3, 4), seed=1)
    for v in net.params.values():
        v += rng.normal(0, 0.1, v.shape)
    x = rng.standard_normal((2, 8, 8))
    y = rng.uniform(0, 1, (2, 8, 8))
    _, grads = net.loss_and_grads(x, y)
    worst = 0.0
    for key, p in net.params.items():
        for idx in np.ndindex(p.shape):
            num = numeric_gradient(lambda: net.loss_and_grads(x, y)[0], net.params, key, idx)
            a = grads[key][idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-7))
    model, held_out = toy_denoiser.value
    trace = model.loss_trace[:11]
    decreasing = len(trace) == 11 and all(b < a for a, b in zip(trace, trace[1:]))
    mse, ones = band_mask_mse(model, held_out)
    checks = [("gradient check", worst < 1e-4, f"max rel. error {worst:.1e}"),
              ("loss strictly decreasing", decreasing, " > ".join(f"{v:.4f}" for v in trace)),
              ("held-out MSE below all-ones", mse < ones, f"{mse:.4f} vs {ones:.4f} on {len(held_out)} clips")]
    _finish(7, "learned components", checks, time.perf_counter() - t + toy_denoiser.seconds, 600.0)


def test_criterion_8_gate(toy_classifier):
    t = time.perf_counter()
    rng = np.random.default_rng(8)
    cfg = GateConfig()
    held = 0
    for case in range(1000):
        n = int(rng.integers(1, 200))
        inside = rng.uniform(cfg.off_threshold, cfg.on_threshold, n)
        inside = inside[(inside > cfg.off_threshold) & (inside < cfg.on_threshold)]
        init = case % 2
        free = rng.uniform(0, 1, n)
        d = hysteresis(free, cfg.on_threshold, cfg.off_threshold)
        prev, rule_ok = 0, True
        for s, v in zip(free, d):
            want = 1 if s >= cfg.on_threshold else 0 if s <= cfg.off_threshold else prev
            rule_ok &= v == want
            prev = v
        held += bool(np.all(hysteresis(inside, cfg.on_threshold, cfg.off_threshold, init) == init) and rule_ok)
    checks = [("hysteresis property", held == 1000, f"{held}/1000 random cases")]
    A, R = cfg.ramp_samples(FS)
    bits = np.r_[np.zeros(4), np.ones(30), np.zeros(40)]
    g = decisions_to_gate(DialogDecisions(bits, bits, 1024), cfg, FS, len(bits) * 1024)
    up = np.count_nonzero((g[:34 * 1024] > 0) & (g[:34 * 1024] < 1)) + 1
    down = np.count_nonzero((g[34 * 1024:] > 0) & (g[34 * 1024:] < 1)) + 1
    checks.append(("ramp lengths", (up, down) == (A, R) == (round(50 * 48), round(500 * 48)),
                   f"attack {up}, release {down} samples"))
    levels = []
    pipe = PipelineConfig(classifier=toy_classifier.value)
    for i in range(4):
        bg, _ = classifier_clip(HELD_OUT_BASE + 20 + i, "background")
        e_out = np.sum(separate_dialog(bg, pipe).samples ** 2)
        levels.append(-np.inf if e_out == 0 else 10 * np.log10(e_out / np.sum(bg.samples ** 2)))
    checks.append(("background-only gated", max(levels) <= -40,
                   f"relative energy {', '.join(f'{v:.1f}' for v in levels)} dB"))
    _finish(8, "gate behavior", checks, time.perf_counter() - t + toy_classifier.seconds, 60.0)


def test_criterion_9_latency():
    t = time.perf_counter()
    rng = np.random.default_rng(9)
    ok_order = ok_max = 0
    n = 200
    for _ in range(n):
        den = None
        if rng.uniform() < 0.5:
            chunk = int(rng.choice([16, 32, 64, 128]))
            den = MaskPredictor("learned-unet", mel_layout(), unet=UNet.init((2, 3, 4)), chunk_frames=chunk)
        cfg = PipelineConfig(slf=SlfConfig(buffer_frames=int(rng.choice([5, 10, 20])), buffer_hop=5),
                             denoiser=den, bypass_slf=bool(rng.uniform() < 0.3),
                             bypass_denoiser=bool(rng.uniform() < 0.3), bypass_gate=bool(rng.uniform() < 0.2))
        mix = latency_report(with_classifier_input(cfg, "mix"))
        proc = latency_report(with_classifier_input(cfg, "processed"))
        ok_order += proc.total >= mix.total
        ok_max += mix.total == max(mix.chain, mix.classifier)
    checks = [("processed >= mix", ok_order == n, f"{ok_order}/{n} configs"),
              ("mix = max(chain, classifier)", ok_max == n, f"{ok_max}/{n} configs")]
    _finish(9, "latency accounting", checks, time.perf_counter() - t, 1.0)
