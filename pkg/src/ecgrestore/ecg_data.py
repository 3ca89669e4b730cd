"""ECG records, ten-second segments, range normalization, and a synthetic
artifact-injection corpus.

Records live on disk as a headered CSV of samples plus a sidecar
annotation CSV, with the sampling rate declared in a per-directory
manifest.  Floats are serialized with repr() so files round-trip
bit-exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .errors import ConfigurationError, InputError

SAMPLING_RATE = 400
SEGMENT_SECONDS = 10
SEGMENT_SAMPLES = SAMPLING_RATE * SEGMENT_SECONDS

BEAT_LABELS = ("N", "S", "V")
QUALITY_TAGS = ("clean", "corrupted", "unknown")

DATA_HEADER = "sample_index,value_mv"
ANNOTATION_HEADER = "sample_index,label"
CORPUS_MANIFEST = "corpus.csv"


@dataclass(frozen=True)
class BeatAnnotation:
    """One beat: the R-peak sample index and its rhythm label."""

    sample_index: int
    label: str

    def __post_init__(self) -> None:
        if self.label not in BEAT_LABELS:
            raise InputError(f"beat label must be one of {BEAT_LABELS}, got {self.label!r}")
        if self.sample_index < 0:
            raise InputError(f"beat sample index must be non-negative, got {self.sample_index}")


@dataclass
class Record:
    """A single-lead recording in millivolts with beat annotations."""

    samples: np.ndarray
    sampling_rate: int = SAMPLING_RATE
    annotations: list[BeatAnnotation] = field(default_factory=list)
    patient_id: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError(f"record samples must be 1-D, got shape {self.samples.shape}")
        indices = [a.sample_index for a in self.annotations]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise InputError("annotation indices must be strictly increasing")
        if indices and indices[-1] >= self.samples.size:
            raise InputError(
                f"annotation index {indices[-1]} outside record of {self.samples.size} samples"
            )


@dataclass
class Segment:
    """A windowed run of samples, optionally normalized into [-1, 1].

    norm_min/norm_max hold the millivolt extremes of the source window so
    the normalization can be inverted; degenerate marks constant windows
    whose normalized form is defined as all zeros.
    """

    samples: np.ndarray
    record_id: str = ""
    start_index: int = 0
    annotations: list[BeatAnnotation] = field(default_factory=list)
    norm_min: float | None = None
    norm_max: float | None = None
    quality: str = "unknown"
    degenerate: bool = False

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError(f"segment samples must be 1-D, got shape {self.samples.shape}")
        if self.quality not in QUALITY_TAGS:
            raise InputError(f"quality must be one of {QUALITY_TAGS}, got {self.quality!r}")
        for a in self.annotations:
            if a.sample_index >= self.samples.size:
                raise InputError(
                    f"annotation index {a.sample_index} outside segment of "
                    f"{self.samples.size} samples"
                )


def normalize(segment: Segment) -> Segment:
    """Map the segment linearly onto [-1, 1], storing the original extremes.

    The minimum maps to exactly -1 and the maximum to exactly +1.  A
    constant segment has no range to map; it becomes all zeros with the
    degenerate flag set.
    """
    x = segment.samples
    if x.size < 2:
        raise InputError("normalization needs at least 2 samples")
    lo = float(np.min(x))
    hi = float(np.max(x))
    if hi == lo:
        return replace(
            segment, samples=np.zeros_like(x), norm_min=lo, norm_max=hi, degenerate=True
        )
    y = 2.0 * (x - lo) / (hi - lo) - 1.0
    return replace(segment, samples=y, norm_min=lo, norm_max=hi, degenerate=False)


def denormalize(segment: Segment) -> Segment:
    """Invert normalize() using the stored extremes."""
    if segment.norm_min is None or segment.norm_max is None:
        raise InputError("segment carries no stored normalization range")
    if segment.degenerate:
        samples = np.full_like(segment.samples, segment.norm_min)
    else:
        half = (segment.norm_max - segment.norm_min) / 2.0
        samples = (segment.samples + 1.0) * half + segment.norm_min
    return replace(segment, samples=samples, norm_min=None, norm_max=None, degenerate=False)


def segment_record(record: Record) -> list[Segment]:
    """Split a record into consecutive non-overlapping 10 s segments.

    The trailing remainder is dropped; annotations land in the segment
    covering them, re-indexed to segment-local offsets.
    """
    if record.sampling_rate * SEGMENT_SECONDS != SEGMENT_SAMPLES:
        raise ConfigurationError(
            f"segmentation assumes {SAMPLING_RATE} Hz; got {record.sampling_rate} Hz "
            "(resampling is out of scope)"
        )
    out = []
    for i in range(record.samples.size // SEGMENT_SAMPLES):
        start = i * SEGMENT_SAMPLES
        stop = start + SEGMENT_SAMPLES
        anns = [
            replace(a, sample_index=a.sample_index - start)
            for a in record.annotations
            if start <= a.sample_index < stop
        ]
        out.append(
            Segment(
                samples=record.samples[start:stop].copy(),
                record_id=record.patient_id,
                start_index=start,
                annotations=anns,
            )
        )
    return out


# Per-beat Gaussian lobes as (offset s, amplitude mV, width s).  A normal
# beat is five lobes; ventricular beats drop the P wave, widen, and carry
# a discordant T.  Supraventricular beats reuse the normal lobes narrowed
# and fire early.
_NORMAL_LOBES = (
    (-0.160, 0.12, 0.022),  # P
    (-0.038, -0.12, 0.010),  # Q
    (0.000, 1.00, 0.012),  # R
    (0.038, -0.20, 0.010),  # S
    (0.240, 0.32, 0.045),  # T
)
_VENTRICULAR_LOBES = (
    (-0.060, -0.25, 0.020),
    (0.000, 1.40, 0.024),
    (0.060, -0.35, 0.020),
    (0.280, -0.30, 0.060),
)
_S_BEAT_EARLY_FRACTION = 0.12
_S_BEAT_WIDTH_SCALE = 0.7


def synth_ecg(
    heart_rate_bpm: float,
    duration_s: float,
    beat_script: Sequence[str] | None = None,
    patient_id: str = "synth",
) -> Record:
    """Generate a clean synthetic ECG with exact R-peak ground truth.

    Each beat is a sum of Gaussian lobes at fixed relative offsets; the
    k-th entry of beat_script relabels beat k as S (early, narrow) or V
    (wide, large, no P wave).  Annotations carry the exact R centers.
    """
    if not 30.0 <= heart_rate_bpm <= 220.0:
        raise ConfigurationError(f"heart rate must lie in [30, 220] bpm, got {heart_rate_bpm}")
    if beat_script is not None:
        bad = [c for c in beat_script if c not in BEAT_LABELS]
        if bad:
            raise ConfigurationError(f"beat script entries must be in {BEAT_LABELS}, got {bad}")
    fs = SAMPLING_RATE
    n = int(round(duration_s * fs))
    period = fs * 60.0 / heart_rate_bpm
    t = np.arange(n, dtype=np.float64)
    samples = np.zeros(n)
    annotations = []
    k = 0
    while True:
        center = period / 2.0 + k * period
        label = "N"
        if beat_script is not None and k < len(beat_script):
            label = beat_script[k]
        if label == "S":
            center -= _S_BEAT_EARLY_FRACTION * period
        r_index = int(round(center))
        if r_index >= n:
            break
        lobes = _VENTRICULAR_LOBES if label == "V" else _NORMAL_LOBES
        width_scale = _S_BEAT_WIDTH_SCALE if label == "S" else 1.0
        for offset_s, amplitude, width_s in lobes:
            mu = center + offset_s * fs
            sigma = max(width_s * fs * width_scale, 1.0)
            samples += amplitude * np.exp(-0.5 * ((t - mu) / sigma) ** 2)
        annotations.append(BeatAnnotation(r_index, label))
        k += 1
    return Record(samples=samples, sampling_rate=fs, annotations=annotations, patient_id=patient_id)


@dataclass(frozen=True)
class CutInterval:
    """A span of samples replaced verbatim by a fill value."""

    start: int
    length: int
    fill: float = 0.0


@dataclass(frozen=True)
class ArtifactSpec:
    """Corruption recipe: additive noise, wander, cuts, QRS attenuation,
    motion bursts.  The all-default spec applies nothing."""

    snr_db: float | None = None
    noise_kind: str = "gaussian"
    noise_band_hz: tuple[float, float] | None = None
    impulse_rate_hz: float = 3.0
    wander_amplitude_mv: float = 0.0
    wander_frequency_hz: float = 0.333
    cuts: tuple[CutInterval, ...] = ()
    qrs_attenuation: float = 1.0
    motion_burst_count: int = 0
    motion_burst_amplitude_mv: float = 0.0
    motion_burst_duration_s: float = 0.25

    def __post_init__(self) -> None:
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ConfigurationError("additive-noise SNR must be finite")
        if self.noise_kind not in ("gaussian", "impulse"):
            raise ConfigurationError(
                f"noise kind must be 'gaussian' or 'impulse', got {self.noise_kind!r}"
            )
        if self.noise_kind == "impulse":
            if self.noise_band_hz is not None:
                raise ConfigurationError("noise passband applies to gaussian noise only")
            if self.impulse_rate_hz <= 0.0:
                raise ConfigurationError(
                    f"impulse rate must be positive, got {self.impulse_rate_hz}"
                )
        if not 0.0 < self.qrs_attenuation <= 1.0:
            raise ConfigurationError(
                f"QRS attenuation must lie in (0, 1], got {self.qrs_attenuation}"
            )
        for cut in self.cuts:
            if cut.start < 0 or cut.length <= 0:
                raise ConfigurationError("cuts need start >= 0 and length > 0")
        if self.noise_band_hz is not None:
            lo, hi = self.noise_band_hz
            if not 0.0 < lo < hi < SAMPLING_RATE / 2:
                raise ConfigurationError(
                    f"noise passband must satisfy 0 < low < high < {SAMPLING_RATE / 2}"
                )
        if self.wander_amplitude_mv < 0.0 or self.wander_frequency_hz <= 0.0:
            raise ConfigurationError("wander needs amplitude >= 0 and frequency > 0")
        if self.motion_burst_count < 0 or self.motion_burst_amplitude_mv < 0.0:
            raise ConfigurationError("motion bursts need count >= 0 and amplitude >= 0")
        if self.motion_burst_duration_s <= 0.0:
            raise ConfigurationError("motion burst duration must be positive")

    @property
    def is_identity(self) -> bool:
        return (
            self.snr_db is None
            and self.wander_amplitude_mv == 0.0
            and not self.cuts
            and self.qrs_attenuation == 1.0
            and (self.motion_burst_count == 0 or self.motion_burst_amplitude_mv == 0.0)
        )


_QRS_HALF_WIDTH = int(round(0.060 * SAMPLING_RATE))


def inject_artifacts(segment: Segment, spec: ArtifactSpec, seed: int) -> Segment:
    """Apply the corruption recipe deterministically under the seed.

    Additive noise is rescaled after any passband coloring so the
    achieved SNR against the clean input power is exact.  Cuts are
    applied last so the fill value survives verbatim.
    """
    x = segment.samples
    n = x.size
    for cut in spec.cuts:
        if cut.start + cut.length > n:
            raise ConfigurationError(
                f"cut [{cut.start}, {cut.start + cut.length}) extends past "
                f"segment of {n} samples"
            )
    if spec.is_identity:
        return replace(segment, samples=x.copy())
    rng = np.random.default_rng(seed)
    y = x.copy()

    if spec.qrs_attenuation < 1.0:
        half = _QRS_HALF_WIDTH
        offsets = np.arange(-half, half + 1)
        dip = 0.5 * (1.0 + np.cos(np.pi * offsets / half))  # 1 at the R center, 0 at edges
        for ann in segment.annotations:
            lo = max(0, ann.sample_index - half)
            hi = min(n, ann.sample_index + half + 1)
            window = dip[lo - (ann.sample_index - half) : hi - (ann.sample_index - half)]
            y[lo:hi] *= 1.0 - (1.0 - spec.qrs_attenuation) * window

    if spec.snr_db is not None:
        p_signal = float(np.mean(x**2))
        if p_signal == 0.0:
            raise InputError("cannot target an SNR against an all-zero segment")
        if spec.noise_kind == "impulse":
            # Sparse electrode-pop samples: each hit slams the sample to a
            # random level drawn relative to the segment's own peak, capped
            # below it so spikes never dominate the amplitude range after
            # min/max normalization.  Stored as additive noise (level - x)
            # so the exact-SNR rescale below applies uniformly.
            mask = rng.random(n) < spec.impulse_rate_hz / SAMPLING_RATE
            signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            levels = signs * rng.uniform(0.5, 0.85, n) * float(np.abs(x).max())
            noise = np.where(mask, levels - x, 0.0)
            if not mask.any():
                raise InputError(
                    "impulse rate too low: no spikes landed in the segment"
                )
        else:
            noise = rng.standard_normal(n)
            if spec.noise_band_hz is not None:
                b, a = sps.butter(2, spec.noise_band_hz, btype="bandpass", fs=SAMPLING_RATE)
                noise = sps.lfilter(b, a, noise)
        p_noise = float(np.mean(noise**2))
        noise *= math.sqrt(p_signal / (10.0 ** (spec.snr_db / 10.0)) / p_noise)
        y += noise

    if spec.wander_amplitude_mv > 0.0:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tt = np.arange(n) / SAMPLING_RATE
        y += spec.wander_amplitude_mv * np.sin(
            2.0 * np.pi * spec.wander_frequency_hz * tt + phase
        )

    if spec.motion_burst_count > 0 and spec.motion_burst_amplitude_mv > 0.0:
        duration = max(2, int(round(spec.motion_burst_duration_s * SAMPLING_RATE)))
        duration = min(duration, n)
        for _ in range(spec.motion_burst_count):
            start = int(rng.integers(0, n - duration + 1))
            envelope = np.hanning(duration)
            y[start : start + duration] += (
                spec.motion_burst_amplitude_mv * envelope * rng.standard_normal(duration)
            )

    for cut in spec.cuts:
        y[cut.start : cut.start + cut.length] = cut.fill
    return replace(segment, samples=y, quality="corrupted")


def has_arrhythmia(segment: Segment) -> bool:
    return any(a.label in ("S", "V") for a in segment.annotations)


def _draw_stratified(
    pool: list[Segment],
    fraction: float,
    size: int,
    rng: np.random.Generator,
    allow_shortfall: bool,
    name: str,
) -> list[Segment]:
    arrhythmic = [s for s in pool if has_arrhythmia(s)]
    normal = [s for s in pool if not has_arrhythmia(s)]
    if len(pool) < size:
        raise ConfigurationError(f"{name} pool has only {len(pool)} segments; {size} requested")
    n_arr = int(round(size * fraction))
    take_arr = min(n_arr, len(arrhythmic))
    take_norm = size - take_arr
    if take_norm > len(normal):
        take_norm = len(normal)
        take_arr = size - take_norm
    if take_arr != n_arr and not allow_shortfall:
        raise ConfigurationError(
            f"{name} pool can only reach arrhythmia fraction {take_arr / size:.3f} of the "
            f"{fraction:.3f} target at size {size}; set allow_shortfall to accept"
        )
    chosen = [arrhythmic[i] for i in rng.permutation(len(arrhythmic))[:take_arr]]
    chosen += [normal[i] for i in rng.permutation(len(normal))[:take_norm]]
    return [chosen[i] for i in rng.permutation(len(chosen))]


def compose_training_set(
    segments: Sequence[Segment],
    target_arrhythmia_fraction: float = 0.334,
    size: int = 4000,
    seed: int = 0,
    allow_shortfall: bool = False,
) -> tuple[list[Segment], list[Segment]]:
    """Draw stratified clean and corrupted pools from tagged segments.

    Each pool holds `size` segments of which round(size * fraction)
    contain at least one S or V beat.  The clean pool is drawn first, so
    one seed fixes both selections.
    """
    if not 0.0 <= target_arrhythmia_fraction <= 1.0:
        raise ConfigurationError("arrhythmia fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    clean = _draw_stratified(
        [s for s in segments if s.quality == "clean"],
        target_arrhythmia_fraction,
        size,
        rng,
        allow_shortfall,
        "clean",
    )
    corrupted = _draw_stratified(
        [s for s in segments if s.quality == "corrupted"],
        target_arrhythmia_fraction,
        size,
        rng,
        allow_shortfall,
        "corrupted",
    )
    return clean, corrupted


def pool_matrix(segments: Sequence[Segment]) -> np.ndarray:
    """Stack normalized segment samples into an (n, length) training pool."""
    if not segments:
        raise InputError("cannot build a pool from zero segments")
    return np.stack([normalize(s).samples for s in segments])


def save_record(record: Record, base) -> None:
    """Write `<base>.csv` and `<base>.annotations.csv`."""
    base = str(base)
    lines = [DATA_HEADER]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(record.samples)]
    Path(base + ".csv").write_text("\n".join(lines) + "\n")
    ann_lines = [ANNOTATION_HEADER]
    ann_lines += [f"{a.sample_index},{a.label}" for a in record.annotations]
    Path(base + ".annotations.csv").write_text("\n".join(ann_lines) + "\n")


def _read_rows(path: Path, expected_header: str) -> list[list[str]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or ",".join(rows[0]) != expected_header:
        raise InputError(f"{path}: expected header {expected_header!r}")
    return rows[1:]


def load_record(base, sampling_rate: int = SAMPLING_RATE) -> Record:
    """Read a record written by save_record; the annotation sidecar is
    optional."""
    base = str(base)
    data_path = Path(base + ".csv")
    if not data_path.exists():
        raise InputError(f"record file {data_path} not found")
    samples = []
    for i, row in enumerate(_read_rows(data_path, DATA_HEADER)):
        if len(row) != 2 or int(row[0]) != i:
            raise InputError(f"{data_path}: malformed or non-contiguous row {i}")
        samples.append(float(row[1]))
    annotations = []
    ann_path = Path(base + ".annotations.csv")
    if ann_path.exists():
        for row in _read_rows(ann_path, ANNOTATION_HEADER):
            if len(row) != 2:
                raise InputError(f"{ann_path}: malformed annotation row {row}")
            annotations.append(BeatAnnotation(int(row[0]), row[1]))
    return Record(
        samples=np.asarray(samples),
        sampling_rate=sampling_rate,
        annotations=annotations,
        patient_id=Path(base).name,
    )


def save_corpus(records: Sequence[Record], directory) -> None:
    """Write a directory of record files plus a small manifest declaring
    the sampling rate and record count."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rates = {r.sampling_rate for r in records}
    if len(rates) > 1:
        raise ConfigurationError(f"corpus mixes sampling rates {sorted(rates)}")
    rate = rates.pop() if rates else SAMPLING_RATE
    for i, record in enumerate(records):
        save_record(record, directory / f"segment_{i:04d}")
    lines = ["key,value", f"sampling_rate_hz,{rate}", f"records,{len(records)}"]
    (directory / CORPUS_MANIFEST).write_text("\n".join(lines) + "\n")


def load_corpus(directory) -> list[Record]:
    directory = Path(directory)
    manifest = directory / CORPUS_MANIFEST
    if not manifest.exists():
        raise InputError(f"{directory} has no {CORPUS_MANIFEST}")
    pairs = {row[0]: row[1] for row in _read_rows(manifest, "key,value")}
    rate = int(pairs["sampling_rate_hz"])
    count = int(pairs["records"])
    return [load_record(directory / f"segment_{i:04d}", rate) for i in range(count)]


_SPEC_FLOAT_FIELDS = (
    "wander_amplitude_mv",
    "wander_frequency_hz",
    "qrs_attenuation",
    "motion_burst_amplitude_mv",
    "motion_burst_duration_s",
)


def save_artifact_spec(spec: ArtifactSpec, path) -> None:
    """Write the spec as flat key=value lines."""
    lines = []
    if spec.snr_db is not None:
        lines.append(f"snr_db={float(spec.snr_db)!r}")
    if spec.noise_kind != "gaussian":
        lines.append(f"noise_kind={spec.noise_kind}")
        lines.append(f"impulse_rate_hz={float(spec.impulse_rate_hz)!r}")
    if spec.noise_band_hz is not None:
        lo, hi = spec.noise_band_hz
        lines.append(f"noise_band_hz={float(lo)!r}:{float(hi)!r}")
    for name in _SPEC_FLOAT_FIELDS:
        lines.append(f"{name}={float(getattr(spec, name))!r}")
    lines.append(f"motion_burst_count={spec.motion_burst_count}")
    if spec.cuts:
        parts = [f"{c.start}:{c.length}:{float(c.fill)!r}" for c in spec.cuts]
        lines.append("cuts=" + ";".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def load_artifact_spec(path) -> ArtifactSpec:
    path = Path(path)
    if not path.exists():
        raise InputError(f"artifact spec file {path} not found")
    kwargs: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key == "snr_db":
            kwargs[key] = float(value)
        elif key == "noise_kind":
            kwargs[key] = value
        elif key == "impulse_rate_hz":
            kwargs[key] = float(value)
        elif key == "noise_band_hz":
            lo, _, hi = value.partition(":")
            kwargs[key] = (float(lo), float(hi))
        elif key in _SPEC_FLOAT_FIELDS:
            kwargs[key] = float(value)
        elif key == "motion_burst_count":
            kwargs[key] = int(value)
        elif key == "cuts":
            cuts = []
            for part in value.split(";"):
                s, l, f = part.split(":")
                cuts.append(CutInterval(int(s), int(l), float(f)))
            kwargs[key] = tuple(cuts)
        else:
            raise InputError(f"{path}:{lineno}: unknown artifact spec field {key!r}")
    return ArtifactSpec(**kwargs)
