"""Command-line front end.

Subcommands cover the three enhancement modes (single file or directory
batch), training, grid evaluation with figure output, an RTF benchmark,
and the synthetic corpus builder. Results go to files; every diagnostic
line goes to stderr. Exit code 0 means every requested output was written.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import (AudioBuffer, PROCESSING_RATE, read_wav, resample,
                       to_processing_format, write_wav)
from .corpus import build_desk_corpus
from .errors import NhansError
from .mixing import (CorpusManifest, read_manifest, scan_corpus,
                     split_manifest_by_role, write_manifest)
from .model import denoise as run_denoise
from .model import selective_denoise, separate
from .report import write_report
from .training import (Checkpoint, checkpoint_to_model, evaluate,
                       load_checkpoint, load_config, train)

MODEL_DIR_ENV = "NHANS_MODEL_DIR"

# subcommand -> (accepted task kinds, default checkpoint basename).
# denoise and selective share model compatibility: denoising is the
# silent-positive special case of selective suppression.
_TASKS = {
    "denoise": (("denoiser", "selective_denoiser"), "denoiser.ckpt"),
    "selective": (("denoiser", "selective_denoiser"), "selective_denoiser.ckpt"),
    "separate": (("separator",), "separator.ckpt"),
}


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_model_path(arg, subcommand: str) -> Path:
    if arg:
        return Path(arg)
    root = os.environ.get(MODEL_DIR_ENV)
    if not root:
        raise NhansError(
            f"no --model given and {MODEL_DIR_ENV} is not set"
        )
    return Path(root) / _TASKS[subcommand][1]


def _load_reference(path) -> AudioBuffer:
    buf, _ = to_processing_format(read_wav(path))
    return buf


def _enhance_file(runner, in_path: Path, out_path: Path) -> None:
    original = read_wav(in_path)
    noisy, original_rate = to_processing_format(original)
    out = runner(noisy)
    if original_rate != PROCESSING_RATE:
        out = resample(out, original_rate)
        # round-trip resampling can be off by a sample; pin the duration
        n = original.num_frames
        s = out.samples
        if s.size < n:
            s = np.pad(s, (0, n - s.size))
        out = AudioBuffer(s[:n], original_rate)
    write_wav(out_path, out, bit_depth="32f")


def _collect_batch(in_dir: Path, out_dir: Path):
    pairs = []
    for entry in sorted(in_dir.iterdir()):
        if entry.is_dir() or entry.suffix.lower() != ".wav":
            _log(f"warning: skipping non-WAV entry {entry.name}")
            continue
        pairs.append((entry, out_dir / entry.name))
    return pairs


def _run_enhancement(args) -> int:
    model_path = _resolve_model_path(args.model, args.command)
    allowed, _ = _TASKS[args.command]
    model = checkpoint_to_model(load_checkpoint(model_path))
    if model.task not in allowed:
        raise NhansError(
            f"checkpoint {model_path} holds a {model.task} model, "
            f"but `{args.command}` needs one of: {', '.join(allowed)}"
        )

    if args.command == "denoise":
        neg = _load_reference(args.neg)
        runner = lambda noisy: run_denoise(model, noisy, neg)
    elif args.command == "selective":
        pos = _load_reference(args.pos)
        neg = _load_reference(args.neg)
        runner = lambda noisy: selective_denoise(model, noisy, pos, neg)
    else:
        pos = _load_reference(args.pos)
        neg = _load_reference(args.neg)
        runner = lambda noisy: separate(model, noisy, pos, neg)

    in_path = Path(args.input)
    out_path = Path(args.output)
    if in_path.is_dir():
        out_path.mkdir(parents=True, exist_ok=True)
        if not out_path.is_dir():
            raise NhansError(f"output {out_path} is not a directory")
        jobs = _collect_batch(in_path, out_path)
        if not jobs:
            raise NhansError(f"no WAV files in {in_path}")
    else:
        if not in_path.is_file():
            raise NhansError(f"no such input: {in_path}")
        jobs = [(in_path, out_path)]

    for _, dst in jobs:
        if dst.exists() and not args.overwrite:
            raise NhansError(f"output {dst} exists; pass --overwrite to replace it")

    for src, dst in jobs:
        _enhance_file(runner, src, dst)
        _log(f"wrote {dst}")
    return 0


def benchmark_rtf(model, duration_s: float = 4.0, repetitions: int = 5,
                  seed: int = 0) -> dict:
    """Median wall-clock enhancement time per second of audio.

    The timed region covers enhancement only; the model, the input signal,
    and the references are prepared beforehand, and nothing touches disk.
    """
    if duration_s < 1.0:
        raise ValueError("benchmark duration must be at least 1 s")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    rate = model.stft_params.sample_rate
    rng = np.random.default_rng(seed)
    noisy = AudioBuffer(rng.standard_normal(int(round(duration_s * rate))) * 0.05,
                        rate)
    ref_n = int(round(1.0 * rate))
    plus = AudioBuffer(rng.standard_normal(ref_n) * 0.05, rate)
    minus = AudioBuffer(rng.standard_normal(ref_n) * 0.05, rate)

    from .model import enhance

    enhance(model, noisy, plus, minus)  # warm-up, untimed
    timings = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        enhance(model, noisy, plus, minus)
        timings.append(time.perf_counter() - t0)

    median = statistics.median(timings)
    ratio = median / duration_s
    return {
        "timings": timings,
        "median_seconds": median,
        "audio_seconds": duration_s,
        "compute_per_audio": ratio,
        "audio_per_compute": 1.0 / ratio,
    }


def format_rtf_report(result: dict) -> str:
    lines = [
        f"audio seconds: {result['audio_seconds']}",
        "raw timings (s): "
        + " ".join(f"{t:.6f}" for t in result["timings"]),
        f"median compute (s): {result['median_seconds']:.6f}",
        f"compute seconds per audio second: {result['compute_per_audio']:.6f}",
        f"audio seconds per compute second: {result['audio_per_compute']:.6f}",
    ]
    return "\n".join(lines) + "\n"


def _run_benchmark(args) -> int:
    model = checkpoint_to_model(load_checkpoint(Path(args.model)))
    result = benchmark_rtf(model, args.duration, args.repetitions, args.seed)
    report = format_rtf_report(result)
    out = Path(args.output)
    if out.exists() and not args.overwrite:
        raise NhansError(f"output {out} exists; pass --overwrite to replace it")
    out.write_text(report)
    _log(f"compute/audio {result['compute_per_audio']:.4f}, "
         f"audio/compute {result['audio_per_compute']:.4f}")
    _log(f"wrote {out}")
    return 0


def _run_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.output:
        config.checkpoint_path = args.output
    if args.corpus:
        root = Path(args.corpus)
        if not config.clean_root:
            config.clean_root = str(root / "clean")
        if not config.noise_root:
            config.noise_root = str(root / "noise")
        if not config.speaker_root:
            config.speaker_root = str(root / "speakers")
    train(config, log=_log)
    _log(f"wrote {config.checkpoint_path}")
    return 0


def _parse_grid(text: str, task: str):
    cells = [c.strip() for c in text.split(",") if c.strip()]
    if task == "selective_denoiser":
        out = []
        for cell in cells:
            plus, _, minus = cell.partition(":")
            if not _:
                raise ValueError(
                    f"selective grid cells are plus:minus pairs, got {cell!r}"
                )
            out.append((float(plus), float(minus)))
        return out
    return [float(c) for c in cells]


def _run_evaluate(args) -> int:
    cp = load_checkpoint(Path(args.model))
    manifests = read_manifest(args.input)
    if args.split == "all":
        manifest = CorpusManifest(
            [e for name in sorted(manifests) for e in manifests[name].entries]
        )
    elif args.split in manifests:
        manifest = manifests[args.split]
    else:
        raise NhansError(
            f"manifest has no {args.split!r} split (found {sorted(manifests)})"
        )
    grid = _parse_grid(args.grid, cp.task)
    reports = evaluate(cp, manifest, grid, pairs_per_cell=args.pairs,
                       seed=args.seed)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = write_report(reports, out_dir, figures=not args.no_figures)
    _log(f"wrote {out_dir / 'report.txt'}")
    for path in written["figures"]:
        _log(f"wrote {path}")
    return 0


def _run_make_corpus(args) -> int:
    root = Path(args.output)
    built = build_desk_corpus(
        root, seed=args.seed, clean_count=args.clean_count,
        tone_instances=args.tone_instances,
        broadband_instances=args.broadband_instances,
        speaker_utterances=args.speaker_utterances,
    )
    mixed = scan_corpus(root / "clean", "clean")
    mixed.entries.extend(scan_corpus(root / "noise", "noise").entries)
    write_manifest(root / "clean_noise.tsv",
                   split_manifest_by_role(mixed, (0.8, 0.1, 0.1), args.seed))
    # speakers get a flatter split: held-out evaluation needs two utterances
    # per speaker, one to mix and one as the reference
    speakers = scan_corpus(root / "speakers", "speaker")
    write_manifest(root / "speakers.tsv",
                   split_manifest_by_role(speakers, (0.5, 0.25, 0.25), args.seed))
    _log(f"built {len(built['clean'])} clean, {len(built['noise'])} noise, "
         f"{sum(len(v) for v in built['speakers'].values())} speaker files "
         f"under {root}")
    return 0


def _add_enhance_parser(sub, name: str, help_text: str, with_pos: bool):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--input", required=True,
                   help="noisy WAV file or directory of WAVs")
    p.add_argument("--output", required=True,
                   help="output WAV file, or directory in batch mode")
    if with_pos:
        p.add_argument("--pos", required=True,
                       help="reference WAV for what to preserve")
    p.add_argument("--neg", required=True,
                   help="reference WAV for what to suppress")
    p.add_argument("--model", help=f"checkpoint path (default: ${MODEL_DIR_ENV})")
    p.add_argument("--overwrite", action="store_true",
                   help="replace existing outputs")
    p.set_defaults(handler=_run_enhancement)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhans",
        description="Conditioned speech enhancement: denoise, selective "
                    "suppression, and speaker separation.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_enhance_parser(sub, "denoise", "suppress all background noise",
                        with_pos=False)
    _add_enhance_parser(sub, "selective",
                        "suppress --neg noise while keeping --pos noise",
                        with_pos=True)
    _add_enhance_parser(sub, "separate",
                        "extract the --pos speaker from a two-speaker mix",
                        with_pos=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--output", help="override the config checkpoint path")
    p.add_argument("--corpus",
                   help="corpus root with clean/ noise/ speakers/ subdirs")
    p.set_defaults(handler=_run_train)

    p = sub.add_parser("evaluate",
                       help="score a checkpoint over a mixing grid")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="corpus manifest TSV")
    p.add_argument("--output", required=True, help="report directory")
    p.add_argument("--grid", default="0,5,10",
                   help="SNR grid; selective cells are plus:minus pairs")
    p.add_argument("--split", default="test",
                   help="manifest split to draw from, or 'all'")
    p.add_argument("--pairs", type=int, default=4,
                   help="mixtures per grid cell")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")
    p.set_defaults(handler=_run_evaluate)

    p = sub.add_parser("benchmark", help="measure the real-time factor")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--output", required=True, help="report text file")
    p.add_argument("--duration", type=float, default=4.0,
                   help="seconds of audio per repetition")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(handler=_run_benchmark)

    p = sub.add_parser("make-corpus",
                       help="synthesize the bundled training corpus")
    p.add_argument("--output", required=True, help="corpus root directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clean-count", type=int, default=24)
    p.add_argument("--tone-instances", type=int, default=3)
    p.add_argument("--broadband-instances", type=int, default=5)
    p.add_argument("--speaker-utterances", type=int, default=8)
    p.set_defaults(handler=_run_make_corpus)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (NhansError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1
