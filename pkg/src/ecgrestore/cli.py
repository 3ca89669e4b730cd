"""Operator commands: synthesize corpora, train, restore, evaluate, plot.

Exit codes are a stable contract: 0 success, 2 usage or input problems,
3 numerical failure.  Every command writes a run manifest into its output
directory; with fixed seeds and configs, reruns are byte-identical (the
manifest timestamp comes from SOURCE_DATE_EPOCH and is empty when unset).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .cyclegan import CycleGanModel, TrainConfig, fit, loss_history_csv
from .ecg_data import (
    CORPUS_MANIFEST,
    SEGMENT_SAMPLES,
    ArtifactSpec,
    CutInterval,
    Record,
    inject_artifacts,
    load_artifact_spec,
    load_corpus,
    load_record,
    pool_matrix,
    save_artifact_spec,
    save_corpus,
    segment_record,
    synth_ecg,
)
from .errors import ConfigurationError, InputError, NumericsError, TrainingDivergenceError
from .peak_eval import (
    EvaluationRow,
    get_detector,
    match_peaks,
    metrics,
    pooled_metrics,
    report_csv,
    restore_record_segments,
)
from .plotting import plot_csv, render_segment_svg

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

MANIFEST_NAME = "run_manifest.csv"


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: tuple[tuple[str, str], ...]
    seed: int
    version: str
    timestamp: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def to_csv(self) -> str:
        lines = [
            "key,value",
            f"command,{self.command}",
            f"version,{self.version}",
            f"seed,{self.seed}",
            f"timestamp,{self.timestamp}",
        ]
        lines += [f"config.{key},{value}" for key, value in self.config]
        lines += [f"input,{p}" for p in self.inputs]
        lines += [f"output,{p}" for p in self.outputs]
        return "\n".join(lines) + "\n"


def build_manifest(command: str, config: dict, seed: int, inputs, outputs) -> RunManifest:
    return RunManifest(
        command=command,
        config=tuple(sorted((k, str(v)) for k, v in config.items())),
        seed=seed,
        version=__version__,
        timestamp=os.environ.get("SOURCE_DATE_EPOCH", ""),
        inputs=tuple(str(p) for p in inputs),
        outputs=tuple(str(p) for p in outputs),
    )


def write_manifest(directory: Path, manifest: RunManifest) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_text(manifest.to_csv())


def default_artifact_spec() -> ArtifactSpec:
    """Desk-scale corruption: 0 dB impulse noise, baseline wander, and one
    1 s cut (position re-rolled per segment)."""
    return ArtifactSpec(
        snr_db=0.0,
        noise_kind="impulse",
        impulse_rate_hz=36.0,
        wander_amplitude_mv=0.1,
        wander_frequency_hz=0.333,
        cuts=(CutInterval(1500, 400, 0.0),),
        qrs_attenuation=1.0,
    )


def _spec_for_segment(spec: ArtifactSpec, rng: np.random.Generator, length: int) -> ArtifactSpec:
    """Re-roll cut positions so every segment is cut somewhere different."""
    if not spec.cuts:
        return spec
    cuts = []
    for cut in spec.cuts:
        start = int(rng.integers(0, max(1, length - cut.length + 1)))
        cuts.append(CutInterval(start, cut.length, cut.fill))
    return replace(spec, cuts=tuple(cuts))


def _random_record(rng: np.random.Generator, args, patient_id: str) -> Record:
    bpm = float(rng.uniform(args.bpm_low, args.bpm_high))
    script = None
    if rng.random() < args.arrhythmia_rate:
        labels: list[str] = []
        while not any(c in "SV" for c in labels):
            labels = ["NSV"[i] for i in rng.choice(3, size=24, p=[0.7, 0.15, 0.15])]
        script = "".join(labels)
    return synth_ecg(bpm, 10, beat_script=script, patient_id=patient_id)


def _corrupt_record(record: Record, spec: ArtifactSpec, rng: np.random.Generator) -> Record:
    segment = segment_record(record)[0]
    seg_spec = _spec_for_segment(spec, rng, segment.samples.size)
    corrupted = inject_artifacts(segment, seg_spec, seed=int(rng.integers(2**31)))
    return Record(
        samples=corrupted.samples,
        sampling_rate=record.sampling_rate,
        annotations=record.annotations,
        patient_id=record.patient_id,
    )


def cmd_synth(args) -> int:
    out = Path(args.out)
    spec = (
        load_artifact_spec(args.artifact_config)
        if args.artifact_config
        else default_artifact_spec()
    )
    rng = np.random.default_rng(args.seed)
    clean = [_random_record(rng, args, f"clean_{i:04d}") for i in range(args.count)]
    corrupted = [
        _corrupt_record(_random_record(rng, args, f"corrupted_{i:04d}"), spec, rng)
        for i in range(args.count)
    ]
    save_corpus(clean, out / "clean")
    save_corpus(corrupted, out / "corrupted")
    outputs = [out / "clean", out / "corrupted"]
    if args.holdout > 0:
        held = [_random_record(rng, args, f"holdout_{i:04d}") for i in range(args.holdout)]
        save_corpus(held, out / "holdout_clean")
        save_corpus([_corrupt_record(r, spec, rng) for r in held], out / "holdout_corrupted")
        outputs += [out / "holdout_clean", out / "holdout_corrupted"]
    save_artifact_spec(spec, out / "artifact_spec.cfg")
    config = {
        "count": args.count,
        "holdout": args.holdout,
        "bpm_low": args.bpm_low,
        "bpm_high": args.bpm_high,
        "arrhythmia_rate": args.arrhythmia_rate,
        "artifact_config": args.artifact_config or "default",
    }
    write_manifest(out, build_manifest("synth", config, args.seed, [], outputs))
    return EXIT_OK


@dataclass
class _Pools:
    clean: np.ndarray
    corrupted: np.ndarray


def _records_to_pool(records: list[Record]) -> np.ndarray:
    segments = []
    for record in records:
        segments.extend(segment_record(record))
    if not segments:
        raise InputError("corpus contains no full 10 s segments")
    return pool_matrix(segments)


def _parse_channels(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"channel list must be comma-separated integers, got {text!r}")


def cmd_train(args) -> int:
    pools = _Pools(
        clean=_records_to_pool(load_corpus(args.clean_dir)),
        corrupted=_records_to_pool(load_corpus(args.corrupted_dir)),
    )
    cfg = TrainConfig(
        lambda_cyc=args.lambda_cyc,
        beta_ide=args.beta,
        lr=args.lr,
        max_iterations=args.iters,
        batch_size=args.batch,
        seed=args.seed,
        q_order=args.q,
        checkpoint_interval=args.checkpoint_interval,
        generator_channels=_parse_channels(args.generator_channels),
        discriminator_channels=_parse_channels(args.discriminator_channels),
    )
    model = CycleGanModel.build(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def sink(m: CycleGanModel, history) -> None:
        save_checkpoint(out / f"checkpoint_{m.iteration:05d}.ckpt", m)

    partial = []
    try:
        history = fit(
            model,
            pools,
            cfg,
            checkpoint_sink=sink,
            progress=lambda it, bundle: partial.append(bundle),
        )
    except TrainingDivergenceError as exc:
        # periodic checkpoints written so far are the last good state
        (out / "loss_history.csv").write_text(loss_history_csv(partial))
        print(f"ecgrestore: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(out / "model.ckpt", model)
    (out / "loss_history.csv").write_text(loss_history_csv(history))
    config = {
        "lambda": cfg.lambda_cyc,
        "beta": cfg.beta_ide,
        "lr": cfg.lr,
        "iters": cfg.max_iterations,
        "batch": cfg.batch_size,
        "q": cfg.q_order,
        "checkpoint_interval": cfg.checkpoint_interval,
        "generator_channels": args.generator_channels or "default",
        "discriminator_channels": args.discriminator_channels or "default",
    }
    write_manifest(
        out,
        build_manifest(
            "train",
            config,
            args.seed,
            [args.clean_dir, args.corrupted_dir],
            [out / "model.ckpt", out / "loss_history.csv"],
        ),
    )
    return EXIT_OK


def _stitch_restored(model: CycleGanModel, record: Record, passes: int) -> Record:
    segments = restore_record_segments(model, record, passes=passes)
    if not segments:
        raise InputError(f"record {record.patient_id!r} is shorter than one 10 s segment")
    samples = np.concatenate([s.samples for s in segments])
    annotations = [a for a in record.annotations if a.sample_index < samples.size]
    return Record(
        samples=samples,
        sampling_rate=record.sampling_rate,
        annotations=annotations,
        patient_id=record.patient_id,
    )


def cmd_restore(args) -> int:
    model = load_checkpoint(args.model)
    source = Path(args.input)
    if (source / CORPUS_MANIFEST).exists():
        records = load_corpus(source)
    else:
        records = [load_record(source)]
    restored = [_stitch_restored(model, r, args.passes) for r in records]
    out = Path(args.out)
    save_corpus(restored, out)
    config = {"model": args.model, "passes": args.passes}
    write_manifest(out, build_manifest("restore", config, 0, [source], [out]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    signals = load_corpus(args.signals)
    if args.truth is not None:
        truth_records = load_corpus(args.truth)
        if len(truth_records) != len(signals):
            raise InputError(
                f"truth corpus has {len(truth_records)} records, signals has {len(signals)}"
            )
    else:
        truth_records = signals
    detect = get_detector(args.detector)
    rows = []
    matches = []
    annotation_lists = []
    for signal, truth in zip(signals, truth_records):
        result = detect(signal.samples, signal.sampling_rate)
        match = match_peaks(
            result,
            [a.sample_index for a in truth.annotations],
            tolerance_ms=args.tolerance_ms,
            fs=signal.sampling_rate,
        )
        matches.append(match)
        annotation_lists.append(truth.annotations)
        rows.append(EvaluationRow(signal.patient_id, metrics(match, truth.annotations)))
    all_rows = [EvaluationRow("pooled", pooled_metrics(matches, annotation_lists))] + rows
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_csv(all_rows))
    config = {"detector": args.detector, "tolerance_ms": args.tolerance_ms}
    inputs = [args.signals] + ([args.truth] if args.truth else [])
    write_manifest(out.parent, build_manifest("evaluate", config, 0, inputs, [out]))
    return EXIT_OK


def cmd_plot(args) -> int:
    record = load_record(args.input)
    segments = segment_record(record)
    if not 0 <= args.segment_index < len(segments):
        raise InputError(
            f"segment index {args.segment_index} out of range; "
            f"record has {len(segments)} segments"
        )
    segment = segments[args.segment_index]
    restored_trace = None
    if args.restored is not None:
        restored_segments = segment_record(load_record(args.restored))
        if args.segment_index >= len(restored_segments):
            raise InputError(
                f"restored record has only {len(restored_segments)} segments"
            )
        restored_trace = restored_segments[args.segment_index].samples
    title = f"{record.patient_id} segment {args.segment_index}"
    svg = render_segment_svg(segment.samples, restored_trace, segment.annotations, title)
    csv_text = plot_csv(segment.samples, restored_trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"segment_{args.segment_index:04d}"
    (out / f"{stem}.svg").write_text(svg)
    (out / f"{stem}.csv").write_text(csv_text)
    config = {
        "input": args.input,
        "restored": args.restored or "",
        "segment_index": args.segment_index,
    }
    inputs = [args.input] + ([args.restored] if args.restored else [])
    write_manifest(out, build_manifest("plot", config, 0, inputs, [out / f"{stem}.svg"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgrestore",
        description="Restore artifact-corrupted single-lead ECG segments and "
        "score the R-peak detection gain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic clean/corrupted corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--holdout", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bpm-low", type=float, default=60.0)
    s.add_argument("--bpm-high", type=float, default=120.0)
    s.add_argument("--arrhythmia-rate", type=float, default=0.5)
    s.add_argument("--artifact-config", default=None)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the restoration model on unpaired pools")
    t.add_argument("--clean-dir", required=True)
    t.add_argument("--corrupted-dir", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--q", type=int, default=3)
    t.add_argument("--iters", type=int, default=1000)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--lambda", dest="lambda_cyc", type=float, default=10.0)
    t.add_argument("--beta", type=float, default=5.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-interval", type=int, default=200)
    t.add_argument("--generator-channels", default=None)
    t.add_argument("--discriminator-channels", default=None)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("restore", help="run records through the trained model")
    r.add_argument("--model", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--passes", type=int, default=1)
    r.set_defaults(func=cmd_restore)

    e = sub.add_parser("evaluate", help="score R-peak detection against truth")
    e.add_argument("--signals", required=True)
    e.add_argument("--truth", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--detector", default="pan-tompkins")
    e.add_argument("--tolerance-ms", type=float, default=75.0)
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render a segment overlay as SVG + CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--restored", default=None)
    p.add_argument("--segment-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigurationError, InputError, OSError, ValueError) as exc:
        print(f"ecgrestore: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericsError as exc:
        print(f"ecgrestore: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())
