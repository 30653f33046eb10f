"""Dialog-presence classification and ramped gating."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, AudioError, StftConfig, band_energies, downmix, octave_layout, stft
from .nn import MLP, SgdMomentum, TrainingDiverged, load_model, save_model

ENERGY_FLOOR_DBFS = -70.0


@dataclass(frozen=True)
class GateConfig:
    attack_ms: float = 50.0
    release_ms: float = 500.0
    on_threshold: float = 0.6
    off_threshold: float = 0.4
    classifier_input: str = "mix"

    def __post_init__(self):
        if not self.off_threshold < self.on_threshold:
            raise ValueError("off_threshold must be below on_threshold")
        if self.attack_ms <= 0 or self.release_ms <= 0:
            raise ValueError("ramp times must be positive")
        if self.classifier_input not in ("mix", "processed"):
            raise ValueError(f"classifier_input must be 'mix' or 'processed', got {self.classifier_input!r}")

    def ramp_samples(self, sample_rate):
        return (max(1, int(round(self.attack_ms * sample_rate / 1000.0))),
                max(1, int(round(self.release_ms * sample_rate / 1000.0))))


@dataclass
class DialogDecisions:
    """Per-frame decisions; frame t governs samples [t*hop, (t+1)*hop)."""

    decision: np.ndarray
    score: np.ndarray
    hop: int = 1024

    def __post_init__(self):
        self.decision = np.asarray(self.decision, dtype=np.int8)
        self.score = np.asarray(self.score, dtype=np.float64)
        if self.decision.shape != self.score.shape:
            raise ValueError("decision and score lengths differ")

    def __len__(self):
        return len(self.decision)

    def sample_activity(self, length: int) -> np.ndarray:
        a = np.repeat(self.decision, self.hop)[:length]
        if len(a) < length:
            a = np.concatenate([a, np.zeros(length - len(a), dtype=a.dtype)])
        return a


def hysteresis(scores, on_threshold, off_threshold, initial=0) -> np.ndarray:
    state = initial
    out = np.empty(len(scores), dtype=np.int8)
    for i, s in enumerate(scores):
        if s >= on_threshold:
            state = 1
        elif s <= off_threshold:
            state = 0
        out[i] = state
    return out


def frame_levels_dbfs(buf: AudioBuffer, hop: int = 1024) -> np.ndarray:
    """Mean-square level of consecutive hop-sized blocks, channels summed."""
    n = -(-len(buf) // hop)
    x = np.zeros((buf.channels, n * hop))
    x[:, :len(buf)] = buf.samples
    ms = (x.reshape(buf.channels, n, hop) ** 2).mean(axis=2).sum(axis=0)
    with np.errstate(divide="ignore"):
        # 0 dBFS = full-scale sine
        return 10.0 * np.log10(ms / 0.5)


def activity_decisions(buf: AudioBuffer, hop: int = 1024, range_db: float = 30.0) -> DialogDecisions:
    """Energy-based activity for clean stems: within ``range_db`` of the 95th percentile."""
    lv = frame_levels_dbfs(buf, hop)
    finite = lv[np.isfinite(lv)]
    if finite.size == 0:
        return DialogDecisions(np.zeros(len(lv)), np.zeros(len(lv)), hop)
    thresh = max(ENERGY_FLOOR_DBFS, np.percentile(finite, 95) - range_db)
    active = lv > thresh
    return DialogDecisions(active, active.astype(float), hop)


# ---------------------------------------------------------------- classifier

CONTEXT = 5
LOG_FLOOR = 1e-10


def classifier_features(buf: AudioBuffer, config: StftConfig = StftConfig(), context: int = CONTEXT):
    """Stacked octave-band log energies (clip-mean removed) over +-context frames.

    Returns (features [frames x (2*context+1)*7], frame levels in dBFS).
    Frame t of the output is the STFT frame centered on sample t*hop.
    """
    layout = octave_layout(config)
    # reflected edges keep the zero padding from reading as an onset
    pad = config.frame_len
    mono = downmix(buf).samples[0]
    ext = np.pad(mono, pad, mode="reflect") if len(mono) > 1 else np.pad(mono, pad)
    spec = stft(AudioBuffer(ext, buf.sample_rate), config)
    e = band_energies(spec, layout)[0] / config.full_scale_energy()
    n_dec = -(-len(buf) // config.hop)
    first = pad // config.hop + 1
    e = e[first:first + n_dec]
    level = 10.0 * np.log10(e.sum(axis=1) + LOG_FLOOR)
    logs = np.log10(e + LOG_FLOOR)
    logs = logs - logs.mean(axis=0)
    padded = np.pad(logs, ((context, context), (0, 0)), mode="edge")
    stacked = np.lib.stride_tricks.sliding_window_view(padded, 2 * context + 1, axis=0)
    feats = stacked.transpose(0, 2, 1).reshape(len(logs), -1)
    return feats, level


class DialogClassifier:
    def __init__(self, mlp: MLP, mean, scale, context=CONTEXT, layout_edges=None):
        self.mlp = mlp
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.context = context
        self.layout_edges = tuple(layout_edges or octave_layout().edges)
        self.loss_trace = []

    @property
    def n_features(self):
        return self.mlp.params["w1"].shape[0]

    def scores(self, feats):
        if feats.shape[1] != self.n_features:
            raise ValueError(f"classifier expects {self.n_features} features, got {feats.shape[1]}")
        return self.mlp.forward((feats - self.mean) / self.scale)[0]

    def save(self, path):
        params = dict(self.mlp.params, feat_mean=self.mean, feat_scale=self.scale)
        save_model(path, "dialog-classifier", {"context": self.context, "layout": list(self.layout_edges)}, params)

    @classmethod
    def load(cls, path) -> "DialogClassifier":
        _, meta, p = load_model(path, "dialog-classifier")
        mean, scale = p.pop("feat_mean"), p.pop("feat_scale")
        return cls(MLP(p), mean, scale, meta["context"], meta["layout"])


def train_classifier(clips, labels, seed=0, hidden=16, epochs=400, lr=0.5, momentum=0.9) -> DialogClassifier:
    """Full-batch training on ``clips`` (AudioBuffers) with per-frame 0/1 ``labels``."""
    feats = []
    ys = []
    for buf, lab in zip(clips, labels):
        f, level = classifier_features(buf)
        keep = level > ENERGY_FLOOR_DBFS
        feats.append(f[keep])
        ys.append(np.asarray(lab, dtype=float)[:len(f)][keep])
    x = np.concatenate(feats)
    y = np.concatenate(ys)
    mean, scale = x.mean(axis=0), x.std(axis=0) + 1e-6
    xs = (x - mean) / scale
    mlp = MLP.init(x.shape[1], hidden, seed)
    opt = SgdMomentum(mlp.params, lr, momentum)
    trace = []
    for _ in range(epochs):
        loss, grads = mlp.loss_and_grads(xs, y)
        trace.append(loss)
        if not np.isfinite(loss):
            raise TrainingDiverged("classifier training diverged", trace)
        opt.step(mlp.params, grads)
    model = DialogClassifier(mlp, mean, scale)
    model.loss_trace = trace
    return model


def classify_frames(buf: AudioBuffer, model: DialogClassifier, config: GateConfig = GateConfig()) -> DialogDecisions:
    if buf.sample_rate != 48000:
        raise AudioError("the dialog classifier runs at 48 kHz")
    if tuple(model.layout_edges) != octave_layout().edges:
        raise ValueError("classifier was trained on a different band layout")
    feats, level = classifier_features(buf, context=model.context)
    score = model.scores(feats)
    score[level <= ENERGY_FLOOR_DBFS] = 0.0
    dec = hysteresis(score, config.on_threshold, config.off_threshold)
    return DialogDecisions(dec, score, StftConfig().hop)


# ---------------------------------------------------------------------- gating

def decisions_to_gate(decisions: DialogDecisions, config: GateConfig, sample_rate: int, length: int) -> np.ndarray:
    """Piecewise-linear gate: attack/release ramps of exactly the configured sample count.

    A ramp starting at sample ``s`` reaches its end value at ``s + R - 1``.
    Transitions arriving mid-ramp continue from the current gain.
    """
    target = decisions.sample_activity(length).astype(np.float64)
    if length == 0:
        return target
    r_att, r_rel = config.ramp_samples(sample_rate)
    gain = np.empty(length)
    bounds = np.concatenate([[0], np.flatnonzero(np.diff(target)) + 1, [length]])
    g = target[0]
    for s, e in zip(bounds[:-1], bounds[1:]):
        k = np.arange(1, e - s + 1)
        if target[s] > g:
            seg = np.minimum(g + k / r_att, 1.0)
        elif target[s] < g:
            seg = np.maximum(g - k / r_rel, 0.0)
        else:
            seg = np.full(e - s, g)
        gain[s:e] = seg
        g = seg[-1]
    return gain


def apply_gate(buf: AudioBuffer, gate) -> AudioBuffer:
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != (len(buf),):
        raise AudioError(f"gate length {gate.shape} does not match signal length {len(buf)}")
    return buf.with_samples(buf.samples * gate)
