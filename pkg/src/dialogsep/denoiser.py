"""Band-mask denoiser: band-energy features in, band softmask out."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioError, BandLayout, Spectrogram, band_energies, mel_layout
from .nn import SgdMomentum, TrainingDiverged, UNet, load_model, save_model

LOG_FLOOR = 1e-10
SCALE_FLOOR = 1e-3
VARIANTS = ("oracle-irm", "learned-unet", "pass-through")


@dataclass
class BandFeatureBlock:
    features: np.ndarray      # standardized, (T, B)
    log_energy: np.ndarray    # before standardization
    layout: BandLayout
    mean: np.ndarray
    scale: np.ndarray


@dataclass
class BandMask:
    values: np.ndarray
    layout: BandLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.layout.n_bands:
            raise AudioError(f"band mask shape {self.values.shape} does not match {self.layout.n_bands} bands")


def _downmix_spec(spec: Spectrogram) -> np.ndarray:
    if spec.channels not in (1, 2):
        raise AudioError("band features need 1 or 2 channels")
    return spec.data.mean(axis=0, keepdims=True)


def compute_band_features(spec: Spectrogram, layout: BandLayout | None = None) -> BandFeatureBlock:
    """log10 band energies of the (L+R)/2 downmix, standardized per band over the block."""
    layout = layout or mel_layout(spec.config)
    mono = spec.with_data(_downmix_spec(spec))
    e = band_energies(mono, layout)[0] / spec.config.full_scale_energy()
    log_e = np.log10(e + LOG_FLOOR)
    mean = log_e.mean(axis=0)
    scale = np.maximum(log_e.std(axis=0), SCALE_FLOOR)
    return BandFeatureBlock((log_e - mean) / scale, log_e, layout, mean, scale)


def oracle_irm(dialog: Spectrogram, background: Spectrogram, layout: BandLayout | None = None) -> BandMask:
    """E_d / (E_d + E_b) per (frame, band), energies summed over channels; 0/0 -> 0."""
    if dialog.data.shape != background.data.shape:
        raise AudioError("dialog and background spectrograms differ in shape")
    layout = layout or mel_layout(dialog.config)
    ed = band_energies(dialog, layout).sum(axis=0)
    eb = band_energies(background, layout).sum(axis=0)
    total = ed + eb
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(total > 0, ed / total, 0.0)
    return BandMask(m, layout)


@dataclass
class DenoiserHyperparams:
    channels: tuple = (8, 16, 32)
    chunk_frames: int = 64
    chunk_hop: int = 32
    batch_size: int = 8
    epochs: int = 10
    lr: float = 0.1
    momentum: float = 0.9
    # learning rate for epoch e is lr / (1 + lr_decay * e)
    lr_decay: float = 0.5


class MaskPredictor:
    def __init__(self, variant: str, layout: BandLayout, unet: UNet | None = None,
                 oracle: BandMask | None = None, chunk_frames: int = 64):
        if variant not in VARIANTS:
            raise ValueError(f"unknown predictor variant {variant!r}")
        if variant == "learned-unet" and unet is None:
            raise ValueError("learned predictor needs network parameters")
        if variant == "oracle-irm" and oracle is None:
            raise ValueError("oracle predictor needs a precomputed mask")
        self.variant = variant
        self.layout = layout
        self.unet = unet
        self.oracle = oracle
        self.chunk_frames = chunk_frames
        self.loss_trace: list[float] = []

    @classmethod
    def pass_through(cls, layout=None) -> "MaskPredictor":
        return cls("pass-through", layout or mel_layout())

    @classmethod
    def from_oracle(cls, dialog: Spectrogram, background: Spectrogram, layout=None) -> "MaskPredictor":
        m = oracle_irm(dialog, background, layout)
        return cls("oracle-irm", m.layout, oracle=m)

    def save(self, path):
        if self.variant != "learned-unet":
            raise ValueError("only learned predictors are saved")
        meta = {"layout": self.layout.to_dict(), "chunk_frames": self.chunk_frames,
                "channels": list(self.unet.channels), "loss_trace": list(self.loss_trace)}
        save_model(path, "band-mask-unet", meta, self.unet.params)

    @classmethod
    def load(cls, path) -> "MaskPredictor":
        _, meta, params = load_model(path, "band-mask-unet")
        p = cls("learned-unet", BandLayout.from_dict(meta["layout"]), UNet(params), chunk_frames=meta["chunk_frames"])
        p.loss_trace = list(meta.get("loss_trace", []))
        return p


def _chunk_starts(T, chunk, hop):
    if T <= chunk:
        return [0]
    starts = list(range(0, T - chunk + 1, hop))
    if starts[-1] != T - chunk:
        starts.append(T - chunk)
    return starts


def _run_unet(unet: UNet, feats: np.ndarray, chunk: int, hop: int) -> np.ndarray:
    T, B = feats.shape
    Tp = max(T, chunk)
    x = np.zeros((Tp, B))
    x[:T] = feats
    starts = _chunk_starts(Tp, chunk, hop)
    batch = np.stack([x[s:s + chunk] for s in starts])
    y, _ = unet.forward(batch)
    acc = np.zeros((Tp, B))
    cnt = np.zeros((Tp, 1))
    # every chunk is weighted equally, so stitching is order independent
    for s, yc in zip(starts, y):
        acc[s:s + chunk] += yc
        cnt[s:s + chunk] += 1
    return (acc / cnt)[:T]


def predict_band_mask(predictor: MaskPredictor, features: BandFeatureBlock) -> BandMask:
    if features.layout != predictor.layout:
        raise ValueError("feature band layout does not match the predictor's layout")
    T = features.features.shape[0]
    if predictor.variant == "pass-through":
        return BandMask(np.ones((T, predictor.layout.n_bands)), predictor.layout)
    if predictor.variant == "oracle-irm":
        if predictor.oracle.values.shape[0] != T:
            raise AudioError("oracle mask length does not match the features")
        return predictor.oracle
    m = _run_unet(predictor.unet, features.features, predictor.chunk_frames, predictor.chunk_frames // 2)
    return BandMask(m, predictor.layout)


def _make_chunks(dataset, chunk, hop):
    xs, ys = [], []
    for feats, target in dataset:
        f = feats.features if isinstance(feats, BandFeatureBlock) else np.asarray(feats)
        t = target.values if isinstance(target, BandMask) else np.asarray(target)
        if f.shape != t.shape:
            raise ValueError(f"feature/target shape mismatch {f.shape} vs {t.shape}")
        T = f.shape[0]
        Tp = max(T, chunk)
        fp = np.zeros((Tp, f.shape[1])); fp[:T] = f
        tp = np.zeros((Tp, f.shape[1])); tp[:T] = t
        for s in _chunk_starts(Tp, chunk, hop):
            xs.append(fp[s:s + chunk])
            ys.append(tp[s:s + chunk])
    return np.stack(xs), np.stack(ys)


def _dataset_loss(unet, x, y, batch):
    total = 0.0
    for i in range(0, len(x), batch):
        pred, _ = unet.forward(x[i:i + batch])
        total += float(np.sum((pred - y[i:i + batch]) ** 2))
    return total / y.size


def train_denoiser(dataset, hyperparams: DenoiserHyperparams = DenoiserHyperparams(), seed: int = 0,
                   layout: BandLayout | None = None, log=None) -> MaskPredictor:
    """SGD-with-momentum training of the U-Net on (features, oracle IRM) pairs.

    ``loss_trace[0]`` is the loss before training and ``loss_trace[e]`` the
    full-dataset MSE after epoch ``e``.
    """
    if not dataset:
        raise ValueError("empty training set")
    hp = hyperparams
    x, y = _make_chunks(dataset, hp.chunk_frames, hp.chunk_hop)
    if layout is None:
        first = dataset[0][0]
        layout = first.layout if isinstance(first, BandFeatureBlock) else mel_layout()
    rng = np.random.default_rng(seed)
    unet = UNet.init(hp.channels, seed=seed)
    opt = SgdMomentum(unet.params, hp.lr, hp.momentum)
    trace = [_dataset_loss(unet, x, y, hp.batch_size)]
    for epoch in range(hp.epochs):
        opt.lr = hp.lr / (1.0 + hp.lr_decay * epoch)
        order = rng.permutation(len(x))
        for i in range(0, len(x), hp.batch_size):
            idx = order[i:i + hp.batch_size]
            loss, grads = unet.loss_and_grads(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", trace)
            opt.step(unet.params, grads)
        trace.append(_dataset_loss(unet, x, y, hp.batch_size))
        if log:
            log(epoch + 1, trace[-1])
    pred = MaskPredictor("learned-unet", layout, unet, chunk_frames=hp.chunk_frames)
    pred.loss_trace = trace
    return pred


def expansion_matrix(layout: BandLayout, K: int) -> np.ndarray:
    """(B, K) weights linearly interpolating band-center values across bins."""
    if layout.n_bins != K:
        raise AudioError(f"layout covers {layout.n_bins} bins, need {K}")
    centers = layout.centers()
    bins = np.arange(K, dtype=np.float64)
    eye = np.eye(layout.n_bands)
    return np.stack([np.interp(bins, centers, eye[b]) for b in range(layout.n_bands)])


def expand_band_mask(mask: BandMask, layout: BandLayout | None = None, K: int | None = None):
    from .slf import SoftMask
    layout = layout or mask.layout
    K = K or layout.n_bins
    return SoftMask(np.clip(mask.values @ expansion_matrix(layout, K), 0.0, 1.0))
