"""R-peak detection, tolerance matching, and detection-quality metrics.

Two classic detectors are provided: the Pan-Tompkins adaptive dual
threshold detector and the Hamilton median-threshold detector, both at a
fixed 400 Hz.  Their numeric parameters live in frozen config dataclasses
so results are reproducible.  Matching is greedy one-to-one within a
sample tolerance; metrics report precision, sensitivity, and F1 with
undefined values left as None rather than zero.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .ecg_data import SAMPLING_RATE, BeatAnnotation, Segment, denormalize, normalize, segment_record
from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class DetectionResult:
    peaks: tuple[int, ...]
    detector: str

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.peaks, self.peaks[1:])):
            raise InputError("detected peaks must be strictly increasing")


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int], ...] = ()  # (truth index, detected index)

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise InputError("match counts must be non-negative")
        if self.pairs and self.tp != len(self.pairs):
            raise InputError("TP must equal the number of matched pairs")


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float | None
    sensitivity: float | None
    f1: float | None
    s_missed: int = 0
    v_missed: int = 0


@dataclass(frozen=True)
class PanTompkinsConfig:
    """Canonical parameterization scaled to 400 Hz."""

    band_hz: tuple[float, float] = (5.0, 15.0)
    mwi_window_s: float = 0.150
    refractory_s: float = 0.200
    t_wave_window_s: float = 0.360
    search_back_factor: float = 1.66
    update_gain: float = 0.125
    search_back_gain: float = 0.25
    threshold_fraction: float = 0.25
    refine_window_s: float = 0.040
    # each accepted burst is anchored at its rising-edge onset (last
    # sample under onset_fraction of the peak); the onset sits a stable
    # number of samples after R where the plateau maximum does not
    onset_fraction: float = 0.25
    onset_to_r_samples: int = 16


@dataclass(frozen=True)
class HamiltonConfig:
    """Canonical parameterization scaled to 400 Hz."""

    band_hz: tuple[float, float] = (8.0, 16.0)
    average_points: int = 8
    buffer_length: int = 8
    threshold_fraction: float = 0.45
    refractory_s: float = 0.300
    search_back_factor: float = 1.5
    refine_window_s: float = 0.040
    extra_delay_samples: int = 8


PAN_TOMPKINS = PanTompkinsConfig()
HAMILTON = HamiltonConfig()


def _validate_signal(signal: np.ndarray, fs: int) -> np.ndarray:
    if fs != SAMPLING_RATE:
        raise ConfigurationError(f"detectors assume {SAMPLING_RATE} Hz, got {fs}")
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"signal must be 1-D, got shape {x.shape}")
    if x.size < 2 * fs:
        raise InputError(f"detection needs at least 2 s of signal, got {x.size / fs:.2f} s")
    return x


def _local_maxima(y: np.ndarray) -> np.ndarray:
    """Indices that strictly rise from the left and do not rise to the right."""
    if y.size < 3:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1


def _refine_peaks(
    x: np.ndarray, candidates: Sequence[int], delay: int, half_window: int, refractory: int
) -> tuple[int, ...]:
    """Shift candidates back by the pipeline delay, snap each to the raw
    signal maximum within the refinement window, then dedupe and enforce
    the refractory gap."""
    refined = []
    for c in candidates:
        center = c - delay
        lo = max(0, center - half_window)
        hi = min(x.size, center + half_window + 1)
        if lo >= hi:
            continue
        refined.append(lo + int(np.argmax(x[lo:hi])))
    refined.sort()
    kept: list[int] = []
    for p in refined:
        if kept and p - kept[-1] < refractory:
            continue
        kept.append(p)
    return tuple(kept)


def detect_pan_tompkins(
    signal, fs: int = SAMPLING_RATE, config: PanTompkinsConfig = PAN_TOMPKINS
) -> DetectionResult:
    """Bandpass, derivative, squaring, moving-window integration, then
    dual adaptive thresholds with search-back and T-wave rejection."""
    x = _validate_signal(signal, fs)
    n = x.size
    # zero-pad past the end so a beat close to the boundary still forms a
    # feature-signal maximum; refinement clamps back to real samples
    pad = int(0.4 * fs)
    b, a = sps.butter(3, config.band_hz, btype="bandpass", fs=fs)
    filtered = sps.lfilter(b, a, np.concatenate([x, np.zeros(pad)]))
    # five-point derivative, causal form (2 samples of delay)
    deriv = sps.lfilter(np.array([2.0, 1.0, 0.0, -1.0, -2.0]) / 8.0, [1.0], filtered)
    squared = deriv**2
    window = int(round(config.mwi_window_s * fs))
    mwi = np.convolve(squared, np.ones(window) / window)[: n + pad]

    refractory = int(round(config.refractory_s * fs))
    t_window = int(round(config.t_wave_window_s * fs))
    learn = mwi[: 2 * fs]
    spki = 0.25 * float(np.max(learn))
    npki = 0.5 * float(np.mean(learn))

    peaks = _local_maxima(mwi)
    values = mwi[peaks]
    accepted: list[int] = []
    accepted_set: set[int] = set()
    rr_intervals: deque[float] = deque(maxlen=8)
    last_slope = 0.0

    def slope_at(i: int) -> float:
        lo = max(0, i - refractory // 2)
        return float(np.max(np.abs(deriv[lo : i + 1]))) if i >= lo else 0.0

    def threshold() -> float:
        return npki + config.threshold_fraction * (spki - npki)

    for idx, (i, pv) in enumerate(zip(peaks, values)):
        i = int(i)
        pv = float(pv)
        if accepted and i - accepted[-1] < refractory:
            continue
        if pv > threshold():
            if accepted and i - accepted[-1] < t_window:
                # candidate inside the T-wave zone: reject when its max
                # slope is under half the previous QRS slope
                if slope_at(i) < 0.5 * last_slope:
                    npki = config.update_gain * pv + (1.0 - config.update_gain) * npki
                    continue
            if accepted:
                rr_intervals.append(i - accepted[-1])
            accepted.append(i)
            accepted_set.add(i)
            last_slope = slope_at(i)
            spki = config.update_gain * pv + (1.0 - config.update_gain) * spki
        else:
            npki = config.update_gain * pv + (1.0 - config.update_gain) * npki
            if accepted and rr_intervals:
                rr_avg = float(np.mean(rr_intervals))
                if i - accepted[-1] > config.search_back_factor * rr_avg:
                    # search back for the tallest skipped peak above THR2
                    lo = accepted[-1] + refractory
                    eligible = [
                        (float(mwi[j]), int(j))
                        for j in peaks[(peaks > lo) & (peaks < i)]
                        if int(j) not in accepted_set and float(mwi[j]) > 0.5 * threshold()
                    ]
                    if eligible:
                        best_v, best_j = max(eligible)
                        rr_intervals.append(best_j - accepted[-1])
                        accepted.append(best_j)
                        accepted_set.add(best_j)
                        spki = (
                            config.search_back_gain * best_v
                            + (1.0 - config.search_back_gain) * spki
                        )

    half = int(round(config.refine_window_s * fs))
    centers = []
    for i in accepted:
        j = i
        floor_idx = max(0, i - 2 * window)
        while j > floor_idx and mwi[j] >= config.onset_fraction * mwi[i]:
            j -= 1
        centers.append(j - config.onset_to_r_samples)
    refined = _refine_peaks(x, centers, 0, half, refractory)
    return DetectionResult(refined, "pan-tompkins")


def detect_hamilton(
    signal, fs: int = SAMPLING_RATE, config: HamiltonConfig = HAMILTON
) -> DetectionResult:
    """Rectified filtered derivative smoothed by a short moving average,
    with median-buffer thresholds, a 300 ms refractory, and search-back."""
    x = _validate_signal(signal, fs)
    n = x.size
    pad = int(0.4 * fs)
    b, a = sps.butter(3, config.band_hz, btype="bandpass", fs=fs)
    filtered = sps.lfilter(b, a, np.concatenate([x, np.zeros(pad)]))
    deriv = np.diff(filtered, prepend=filtered[0])
    avg = np.convolve(np.abs(deriv), np.ones(config.average_points) / config.average_points)[
        : n + pad
    ]

    refractory = int(round(config.refractory_s * fs))
    learn = avg[: 2 * fs]
    qrs_buf: deque[float] = deque([float(np.max(learn))], maxlen=config.buffer_length)
    noise_buf: deque[float] = deque([float(np.mean(learn))], maxlen=config.buffer_length)
    rr_buf: deque[float] = deque(maxlen=config.buffer_length)

    peaks = _local_maxima(avg)
    accepted: list[int] = []
    accepted_set: set[int] = set()

    def threshold() -> float:
        noise = float(np.median(noise_buf))
        qrs = float(np.median(qrs_buf))
        return noise + config.threshold_fraction * (qrs - noise)

    for i in peaks:
        i = int(i)
        pv = float(avg[i])
        if accepted and i - accepted[-1] < refractory:
            noise_buf.append(pv)
            continue
        if pv > threshold():
            if accepted:
                rr_buf.append(i - accepted[-1])
            accepted.append(i)
            accepted_set.add(i)
            qrs_buf.append(pv)
        else:
            noise_buf.append(pv)
            if accepted and rr_buf:
                median_rr = float(np.median(rr_buf))
                if i - accepted[-1] > config.search_back_factor * median_rr:
                    lo = accepted[-1] + refractory
                    eligible = [
                        (float(avg[j]), int(j))
                        for j in peaks[(peaks > lo) & (peaks < i)]
                        if int(j) not in accepted_set and float(avg[j]) > 0.5 * threshold()
                    ]
                    if eligible:
                        best_v, best_j = max(eligible)
                        rr_buf.append(best_j - accepted[-1])
                        accepted.append(best_j)
                        accepted_set.add(best_j)
                        qrs_buf.append(best_v)

    delay = (config.average_points - 1) // 2 + config.extra_delay_samples
    half = int(round(config.refine_window_s * fs))
    refined = _refine_peaks(x, accepted, delay, half, refractory)
    return DetectionResult(refined, "hamilton")


DETECTORS = {
    "pan-tompkins": detect_pan_tompkins,
    "hamilton": detect_hamilton,
}


def get_detector(name: str):
    try:
        return DETECTORS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown detector {name!r}; choose from {sorted(DETECTORS)}"
        ) from None


def match_peaks(
    detected, truth, tolerance_ms: float = 75.0, fs: int = SAMPLING_RATE
) -> MatchResult:
    """Greedy one-to-one matching: each truth peak takes the nearest
    unmatched detection within floor(tolerance_ms * fs / 1000) samples."""
    d = list(detected.peaks) if isinstance(detected, DetectionResult) else list(detected)
    t = list(truth)
    for seq, name in ((d, "detected"), (t, "truth")):
        if any(b <= a for a, b in zip(seq, seq[1:])):
            raise InputError(f"{name} indices must be strictly increasing")
    tolerance = math.floor(tolerance_ms * fs / 1000.0)
    used = [False] * len(d)
    pairs = []
    for truth_idx in t:
        best = None
        best_dist = tolerance + 1
        for j, det_idx in enumerate(d):
            if used[j]:
                continue
            dist = abs(det_idx - truth_idx)
            if dist < best_dist:
                best, best_dist = j, dist
        if best is not None:
            used[best] = True
            pairs.append((truth_idx, d[best]))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(d) - tp, fn=len(t) - tp, pairs=tuple(pairs))


def metrics(match: MatchResult, annotations: Sequence[BeatAnnotation] = ()) -> MetricsReport:
    """Precision, sensitivity, and F1 from the counts, plus missed S/V
    beats.  A metric with a zero denominator is None, not zero."""
    tp, fp, fn = match.tp, match.fp, match.fn
    precision = tp / (tp + fp) if tp + fp > 0 else None
    sensitivity = tp / (tp + fn) if tp + fn > 0 else None
    f1 = None
    if precision is not None and sensitivity is not None:
        f1 = (
            2.0 * precision * sensitivity / (precision + sensitivity)
            if precision + sensitivity > 0
            else 0.0
        )
    matched_truth = {truth_idx for truth_idx, _ in match.pairs}
    s_missed = sum(
        1 for a in annotations if a.label == "S" and a.sample_index not in matched_truth
    )
    v_missed = sum(
        1 for a in annotations if a.label == "V" and a.sample_index not in matched_truth
    )
    return MetricsReport(tp, fp, fn, precision, sensitivity, f1, s_missed, v_missed)


@dataclass(frozen=True)
class EvaluationRow:
    variant: str
    report: MetricsReport


def pooled_metrics(counts: list[MatchResult], annotations: list[BeatAnnotation]) -> MetricsReport:
    total = MatchResult(
        tp=sum(m.tp for m in counts),
        fp=sum(m.fp for m in counts),
        fn=sum(m.fn for m in counts),
    )
    base = metrics(total)
    s_missed = v_missed = 0
    for m, anns in zip(counts, annotations):
        per = metrics(m, anns)
        s_missed += per.s_missed
        v_missed += per.v_missed
    return MetricsReport(
        base.tp, base.fp, base.fn, base.precision, base.sensitivity, base.f1, s_missed, v_missed
    )


def restore_record_segments(model, record, passes: int = 1) -> list[Segment]:
    """Segment a record and run each window through normalize, the
    corrupted-to-clean generator, and denormalize."""
    from .cyclegan import restore_segment

    restored = []
    for segment in segment_record(record):
        normalized = normalize(segment)
        cleaned = restore_segment(model, normalized.samples, passes=passes)
        out = denormalize(
            Segment(
                samples=cleaned,
                record_id=segment.record_id,
                start_index=segment.start_index,
                annotations=segment.annotations,
                norm_min=normalized.norm_min,
                norm_max=normalized.norm_max,
                degenerate=normalized.degenerate,
                quality=segment.quality,
            )
        )
        restored.append(out)
    return restored


def evaluate_restoration(
    records,
    model,
    detector: str = "pan-tompkins",
    passes: int = 1,
    tolerance_ms: float = 75.0,
) -> list[EvaluationRow]:
    """Detection quality on original vs restored signals.

    Returns pooled rows first ("original", "restored"), then one pair of
    rows per record.  Detection runs per 10 s segment against that
    segment's annotated R-peaks.
    """
    detect = get_detector(detector)
    variants: dict[str, tuple[list[MatchResult], list[list[BeatAnnotation]]]] = {
        "original": ([], []),
        "restored": ([], []),
    }
    per_record: list[EvaluationRow] = []
    for record in records:
        record_counts: dict[str, list] = {"original": [], "restored": []}
        record_anns: dict[str, list] = {"original": [], "restored": []}
        originals = segment_record(record)
        restoreds = restore_record_segments(model, record, passes=passes)
        for variant, segments in (("original", originals), ("restored", restoreds)):
            for segment in segments:
                result = detect(segment.samples, SAMPLING_RATE)
                truth = [a.sample_index for a in segment.annotations]
                match = match_peaks(result, truth, tolerance_ms=tolerance_ms)
                record_counts[variant].append(match)
                record_anns[variant].append(segment.annotations)
                variants[variant][0].append(match)
                variants[variant][1].append(segment.annotations)
        for variant in ("original", "restored"):
            per_record.append(
                EvaluationRow(
                    f"{variant}:{record.patient_id}",
                    pooled_metrics(record_counts[variant], record_anns[variant]),
                )
            )
    rows = [
        EvaluationRow("original", pooled_metrics(*variants["original"])),
        EvaluationRow("restored", pooled_metrics(*variants["restored"])),
    ]
    return rows + per_record


REPORT_CSV_HEADER = "variant,TP,FN,FP,recall,precision,f1,s_missed,v_missed"


def report_csv(rows: Sequence[EvaluationRow]) -> str:
    """Render evaluation rows; undefined metrics become empty cells."""

    def cell(value: float | None) -> str:
        return "" if value is None else repr(float(value))

    lines = [REPORT_CSV_HEADER]
    for row in rows:
        r = row.report
        lines.append(
            ",".join(
                [
                    row.variant,
                    str(r.tp),
                    str(r.fn),
                    str(r.fp),
                    cell(r.sensitivity),
                    cell(r.precision),
                    cell(r.f1),
                    str(r.s_missed),
                    str(r.v_missed),
                ]
            )
        )
    return "\n".join(lines) + "\n"
