"""DNR-controlled stereo corpus synthesis with center, static and moving pans."""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import synth
from .audio import AudioBuffer, AudioError, read_wav, write_wav
from .loudness import integrated_loudness, measure_dnr

PAN_KINDS = ("center", "static", "moving")
FADE_S = 0.005
BACKGROUND_LKFS = -30.0
DNR_TOLERANCE_DB = 0.5


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetPlan:
    items: int = 128
    dnrs_db: tuple = (0.0, 5.0, 10.0)
    clip_seconds: float = 10.0
    pan_distribution: tuple = (0.60, 0.30, 0.10)
    seed: int = 0
    sample_rate: int = 48000

    def __post_init__(self):
        if abs(sum(self.pan_distribution) - 1.0) > 1e-9 or len(self.pan_distribution) != 3:
            raise DatasetError("pan fractions (center, static, moving) must sum to 1")
        if self.items < 1:
            raise DatasetError("need at least one item")


@dataclass(frozen=True)
class PanTrajectory:
    kind: str
    alpha_start: float = np.pi / 4
    alpha_end: float = np.pi / 4

    def angles(self, n: int) -> np.ndarray:
        if self.kind == "moving":
            return np.linspace(self.alpha_start, self.alpha_end, n)
        return np.full(n, self.alpha_start)


@dataclass
class ClipEntry:
    clip_id: str
    item: int
    speech_source: str
    speech_offset: int
    background_source: str
    background_offset: int
    pan_kind: str
    alpha_start: float
    alpha_end: float
    target_dnr_db: float
    clip_seconds: float = 10.0
    sample_rate: int = 48000
    speech_gain_db: float = float("nan")
    background_gain_db: float = float("nan")
    measured_dnr_db: float = float("nan")
    mix_path: str = ""
    dialog_path: str = ""
    background_path: str = ""

    @property
    def trajectory(self) -> PanTrajectory:
        return PanTrajectory(self.pan_kind, self.alpha_start, self.alpha_end)


MANIFEST_COLUMNS = [f for f in ClipEntry.__dataclass_fields__]


def largest_remainder(fractions, total: int) -> list[int]:
    quotas = [f * total for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    # rounding keeps float noise from breaking ties toward the earlier kind
    rema = sorted(range(len(quotas)), key=lambda i: (-round(quotas[i] - counts[i], 9), i))
    for i in rema[:total - sum(counts)]:
        counts[i] += 1
    return counts


def _source_length(ref, clip_seconds, sample_rate):
    if ref.startswith("synth:"):
        return int(round(clip_seconds * sample_rate))
    import wave
    try:
        with wave.open(ref) as w:
            return w.getnframes()
    except wave.Error:
        return len(read_wav(ref))


def plan_dataset(plan: DatasetPlan, speech_pool, background_pool) -> list[ClipEntry]:
    """Deterministic manifest of ``items x len(dnrs)`` clips.

    Pools hold WAV paths or ``synth:`` refs. The DNR versions of an item share
    sources, offsets and pan trajectory.
    """
    if not speech_pool or not background_pool:
        raise DatasetError("speech and background pools must be nonempty")
    rng = np.random.default_rng(plan.seed)
    need = int(round(plan.clip_seconds * plan.sample_rate))
    lengths = {}
    for ref in list(speech_pool) + list(background_pool):
        lengths[ref] = _source_length(ref, plan.clip_seconds, plan.sample_rate)
    short = [r for r, n in lengths.items() if n < need]
    if short:
        raise DatasetError(f"sources shorter than {plan.clip_seconds} s: {short}")

    counts = largest_remainder(plan.pan_distribution, plan.items)
    kinds = np.repeat(np.arange(3), counts)
    rng.shuffle(kinds)
    entries = []
    for item in range(plan.items):
        sp = speech_pool[item % len(speech_pool)]
        bg = background_pool[int(rng.integers(len(background_pool)))]
        sp_off = int(rng.integers(lengths[sp] - need + 1))
        bg_off = int(rng.integers(lengths[bg] - need + 1))
        kind = PAN_KINDS[kinds[item]]
        a0 = a1 = np.pi / 4
        if kind == "static":
            a0 = a1 = float(rng.uniform(0.0, np.pi / 2))
        elif kind == "moving":
            a0, a1 = (float(v) for v in rng.uniform(0.0, np.pi / 2, 2))
        for dnr in plan.dnrs_db:
            entries.append(ClipEntry(
                clip_id=f"item{item:03d}_dnr{dnr:g}", item=item,
                speech_source=sp, speech_offset=sp_off,
                background_source=bg, background_offset=bg_off,
                pan_kind=kind, alpha_start=a0, alpha_end=a1, target_dnr_db=float(dnr),
                clip_seconds=plan.clip_seconds, sample_rate=plan.sample_rate))
    return entries


def _load(ref, offset, n, seconds):
    buf = synth.resolve_source(ref, seconds) if ref.startswith("synth:") else read_wav(ref)
    if buf.sample_rate != 48000:
        raise AudioError(f"{ref}: sources must be 48 kHz")
    return buf.samples[:, offset:offset + n]


def fade(x: np.ndarray, sample_rate: int, seconds: float = FADE_S) -> np.ndarray:
    m = int(round(seconds * sample_rate))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(m) / m)
    y = x.copy()
    y[..., :m] *= ramp
    y[..., -m:] *= ramp[::-1]
    return y


def pan(mono: np.ndarray, trajectory: PanTrajectory) -> np.ndarray:
    """Constant-power pan: L = cos(a), R = sin(a)."""
    a = trajectory.angles(mono.shape[-1])
    return np.vstack([np.cos(a) * mono, np.sin(a) * mono])


def render_mix(entry: ClipEntry, background_pan: float | None = None):
    """Returns (mix, dialog_stem, background_stem); fills gains and measured DNR.

    ``background_pan`` forces a mono background to a fixed pan angle instead
    of keeping the source's stereo image.
    """
    fs = entry.sample_rate
    n = int(round(entry.clip_seconds * fs))
    sp = _load(entry.speech_source, entry.speech_offset, n, entry.clip_seconds)
    bg = _load(entry.background_source, entry.background_offset, n, entry.clip_seconds)
    dialog = pan(fade(sp.mean(axis=0), fs), entry.trajectory)
    if background_pan is not None:
        background = pan(fade(bg.mean(axis=0), fs), PanTrajectory("static", background_pan, background_pan))
    elif bg.shape[0] == 1:
        background = pan(fade(bg[0], fs), PanTrajectory("center"))
    else:
        background = fade(bg, fs)
    d_buf = AudioBuffer(dialog, fs, "dialog")
    b_buf = AudioBuffer(background, fs, "background")

    b_lkfs = integrated_loudness(b_buf, "gated").lkfs
    if not np.isfinite(b_lkfs):
        raise DatasetError(f"{entry.clip_id}: background is silent")
    b_gain_db = BACKGROUND_LKFS - b_lkfs
    b_buf = b_buf.scaled(10 ** (b_gain_db / 20))
    dnr0 = measure_dnr(d_buf, b_buf).dnr_db
    s_gain_db = entry.target_dnr_db - dnr0
    d_buf = d_buf.scaled(10 ** (s_gain_db / 20))
    # stems are stored as float32; the mix is their float32 sum
    d32 = d_buf.samples.astype(np.float32)
    b32 = b_buf.samples.astype(np.float32)
    m32 = d32 + b32
    peak = float(np.max(np.abs(m32)))
    if peak > 1.0:
        raise DatasetError(f"{entry.clip_id}: DNR {entry.target_dnr_db} dB clips; needs {20 * np.log10(peak):.2f} dB headroom")
    dialog_stem = AudioBuffer(d32, fs, "dialog")
    background_stem = AudioBuffer(b32, fs, "background")
    mix = AudioBuffer(m32, fs, "mix")
    entry.speech_gain_db = float(s_gain_db)
    entry.background_gain_db = float(b_gain_db)
    entry.measured_dnr_db = float(measure_dnr(dialog_stem, background_stem).dnr_db)
    if abs(entry.measured_dnr_db - entry.target_dnr_db) > DNR_TOLERANCE_DB:
        raise DatasetError(f"{entry.clip_id}: measured DNR {entry.measured_dnr_db:.2f} misses target")
    return mix, dialog_stem, background_stem


def write_manifest(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, MANIFEST_COLUMNS, lineterminator="\n")
        w.writeheader()
        for e in entries:
            row = asdict(e)
            for k, v in row.items():
                if isinstance(v, float):
                    row[k] = repr(v)
            w.writerow(row)


def read_manifest(path) -> list[ClipEntry]:
    types = {k: f.type for k, f in ClipEntry.__dataclass_fields__.items()}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                kw[k] = int(v) if t in (int, "int") else float(v) if t in (float, "float") else v
            out.append(ClipEntry(**kw))
    return out


def _render_one(entry: ClipEntry, out_dir) -> ClipEntry:
    mix, d, b = render_mix(entry)
    for role, buf in (("mix", mix), ("dialog", d), ("background", b)):
        name = f"{entry.clip_id}_{role}.wav"
        write_wav(os.path.join(out_dir, name), buf, "float32")
        setattr(entry, f"{role}_path", name)
    return entry


def render_dataset(entries, out_dir, progress=None, jobs: int = 1) -> list[ClipEntry]:
    """Render every clip to ``out_dir`` as float32 WAVs and write manifest.csv.

    Clips are independent, so ``jobs > 1`` renders them in worker processes;
    the manifest keeps plan order either way.
    """
    os.makedirs(out_dir, exist_ok=True)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            done = list(ex.map(_render_one, entries, [out_dir] * len(entries)))
    else:
        done = []
        for e in entries:
            done.append(_render_one(e, out_dir))
            if progress:
                progress(e)
    write_manifest(done, os.path.join(out_dir, "manifest.csv"))
    return done


def synthetic_pools(n_speech: int, n_background: int, seed: int = 0):
    return ([f"synth:speech:{seed * 100000 + i}" for i in range(n_speech)],
            [f"synth:background:{seed * 100000 + 50000 + i}" for i in range(n_background)])
