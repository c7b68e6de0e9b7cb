"""Training loop, checkpoint serialization, and grid evaluation.

The loss is signal approximation: mean squared error between the masked
noisy magnitude and the target magnitude, in the linear domain. Batches
are fixed-length crops with per-example SNRs drawn from the config grid.
Checkpoints are a text header plus a little-endian float32 payload and
round-trip bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio_io import AudioBuffer, PROCESSING_RATE, read_wav, to_processing_format
from .dsp import StftParams, log_magnitude, stft
from .errors import CheckpointError, CorpusError, TaskMismatchError
from .metrics import aggregate_report, bss_eval, lsd, mcd, ssnr, stoi
from .mixing import (CorpusManifest, MixTuple, REFERENCE_SECONDS, loop_to_length,
                     make_denoising_tuple, make_selective_tuple,
                     make_separation_tuple, scan_corpus, split_manifest,
                     split_manifest_by_role)
from .model import (EnhancementModel, ModelConfig, TASK_KINDS, enhance,
                    mute_recording)

CHECKPOINT_MAGIC = "NHANS-CKPT v1"

DENOISER_SNR_GRID = (0.0, 3.0, 5.0, 10.0, 15.0)
SELECTIVE_SNR_GRID = (0.0, 3.0, 5.0, 8.0)


@dataclass
class TrainConfig:
    task: str = "denoiser"
    steps: int = 100
    batch_size: int = 4
    lr: float = 1e-4
    snr_grid: tuple = DENOISER_SNR_GRID
    plus_snr_grid: tuple = SELECTIVE_SNR_GRID
    seed: int = 0
    clean_root: str = ""
    noise_root: str = ""
    speaker_root: str = ""
    checkpoint_path: str = "model.ckpt"
    eval_interval: int = 100
    hidden_size: int = 256
    num_blocks: int = 4
    context_frames: int = 5
    embedding_dim: int = 64
    crop_seconds: float = 1.0
    reference_mode: str = "disjoint"

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.hidden_size, self.num_blocks,
                           self.context_frames, self.embedding_dim)

    def validate(self):
        if self.task not in TASK_KINDS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.eval_interval <= 0:
            raise ValueError("eval_interval must be positive")
        if not self.snr_grid:
            raise ValueError("snr_grid is empty")
        if self.task == "selective_denoiser" and not self.plus_snr_grid:
            raise ValueError("plus_snr_grid is empty")
        if self.task == "separator":
            needed = [("speaker_root", self.speaker_root)]
        else:
            needed = [("clean_root", self.clean_root),
                      ("noise_root", self.noise_root)]
        for name, root in needed:
            if not root:
                raise ValueError(f"{name} is required for task {self.task}")
            if not Path(root).is_dir():
                raise CorpusError(f"{name} does not exist: {root}")


_TUPLE_FIELDS = {"snr_grid", "plus_snr_grid"}


def parse_config(text: str) -> TrainConfig:
    """Parse the key=value config format; '#' starts a comment line."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ValueError(
                f"line {line_no}: unknown key {key!r} "
                f"(valid: {', '.join(sorted(known))})"
            )
        values[key] = value

    config = TrainConfig()
    for key, value in values.items():
        current = getattr(config, key)
        if key in _TUPLE_FIELDS:
            parsed = tuple(float(v) for v in value.split(",") if v.strip())
        elif isinstance(current, bool):
            parsed = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            parsed = int(value)
        elif isinstance(current, float):
            parsed = float(value)
        else:
            parsed = value
        setattr(config, key, parsed)
    return config


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


@dataclass
class Checkpoint:
    task: str
    step: int
    config: ModelConfig
    stft_params: StftParams
    params: dict
    rng_state: dict | None = None
    optimizer: dict | None = None  # {"step_count": int, "m": {...}, "v": {...}}


def model_to_checkpoint(model: EnhancementModel, step: int,
                        rng_state: dict | None = None,
                        adam: ad.AdamState | None = None) -> Checkpoint:
    params = {p.name: np.asarray(p.value, dtype=np.float32)
              for p in model.parameters()}
    optimizer = None
    if adam is not None:
        optimizer = {
            "step_count": adam.step_count,
            "m": {k: np.asarray(v, dtype=np.float32) for k, v in adam.m.items()},
            "v": {k: np.asarray(v, dtype=np.float32) for k, v in adam.v.items()},
        }
    return Checkpoint(model.task, step, model.config, model.stft_params,
                      params, rng_state, optimizer)


def checkpoint_to_model(cp: Checkpoint) -> EnhancementModel:
    model = EnhancementModel(cp.task, cp.config, cp.stft_params, seed=0)
    named = model.named_parameters()
    if set(named) != set(cp.params):
        missing = sorted(set(named) ^ set(cp.params))
        raise CheckpointError(f"parameter names do not match the model: {missing}")
    for name, tensor in named.items():
        stored = cp.params[name]
        if stored.shape != tensor.value.shape:
            raise CheckpointError(
                f"{name}: stored shape {stored.shape} != model {tensor.value.shape}"
            )
        tensor.value = stored.astype(np.float32)
    return model


def save_checkpoint(cp: Checkpoint, path) -> None:
    """Text header plus little-endian float32 payload; bitwise stable."""
    names = list(cp.params)
    arrays = [np.ascontiguousarray(cp.params[n], dtype="<f4") for n in names]
    entries = list(zip(names, arrays))
    if cp.optimizer is not None:
        for prefix in ("m", "v"):
            for name in names:
                arr = np.ascontiguousarray(cp.optimizer[prefix][name], dtype="<f4")
                entries.append((f"optimizer.{prefix}.{name}", arr))

    header = [
        CHECKPOINT_MAGIC,
        f"task {cp.task}",
        f"step {cp.step}",
        f"hidden_size {cp.config.hidden_size}",
        f"num_blocks {cp.config.num_blocks}",
        f"context_frames {cp.config.context_frames}",
        f"embedding_dim {cp.config.embedding_dim}",
        f"fft_size {cp.stft_params.fft_size}",
        f"hop {cp.stft_params.hop}",
        f"sample_rate {cp.stft_params.sample_rate}",
        f"optimizer_step {cp.optimizer['step_count'] if cp.optimizer else -1}",
        "rng " + (json.dumps(cp.rng_state, sort_keys=True)
                  if cp.rng_state else "-"),
        f"tensors {len(entries)}",
    ]
    for name, arr in entries:
        dims = " ".join(str(d) for d in arr.shape)
        header.append(f"{name} {arr.ndim} {dims}".rstrip())
    header.append("payload")

    blob = "\n".join(header).encode() + b"\n"
    blob += b"".join(arr.tobytes() for _, arr in entries)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    marker = b"\npayload\n"
    cut = raw.find(marker)
    if cut < 0:
        raise CheckpointError(f"{path}: missing payload marker")
    header_lines = raw[:cut].decode("utf-8", errors="replace").split("\n")
    payload = raw[cut + len(marker):]

    if header_lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: unsupported format {header_lines[0]!r}, "
            f"expected {CHECKPOINT_MAGIC!r}"
        )

    meta = {}
    idx = 1
    for idx in range(1, len(header_lines)):
        key, _, value = header_lines[idx].partition(" ")
        meta[key] = value
        if key == "tensors":
            break
    else:
        raise CheckpointError(f"{path}: truncated header")

    count = int(meta["tensors"])
    shapes = []
    for line in header_lines[idx + 1 : idx + 1 + count]:
        parts = line.split(" ")
        name, ndim = parts[0], int(parts[1])
        dims = tuple(int(d) for d in parts[2 : 2 + ndim])
        if len(dims) != ndim:
            raise CheckpointError(f"{path}: malformed tensor line {line!r}")
        shapes.append((name, dims))
    if len(shapes) != count:
        raise CheckpointError(f"{path}: expected {count} tensor lines")

    total = sum(int(np.prod(dims, dtype=np.int64)) for _, dims in shapes)
    if len(payload) != 4 * total:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, header implies {4 * total}"
        )

    flat = np.frombuffer(payload, dtype="<f4")
    params: dict = {}
    opt_m: dict = {}
    opt_v: dict = {}
    offset = 0
    for name, dims in shapes:
        size = int(np.prod(dims, dtype=np.int64))
        arr = flat[offset : offset + size].reshape(dims).copy()
        offset += size
        if name.startswith("optimizer.m."):
            opt_m[name[len("optimizer.m."):]] = arr
        elif name.startswith("optimizer.v."):
            opt_v[name[len("optimizer.v."):]] = arr
        else:
            params[name] = arr

    opt_step = int(meta.get("optimizer_step", "-1"))
    optimizer = None
    if opt_step >= 0:
        optimizer = {"step_count": opt_step, "m": opt_m, "v": opt_v}

    rng_state = None if meta.get("rng", "-") == "-" else json.loads(meta["rng"])
    config = ModelConfig(
        hidden_size=int(meta["hidden_size"]),
        num_blocks=int(meta["num_blocks"]),
        context_frames=int(meta["context_frames"]),
        embedding_dim=int(meta["embedding_dim"]),
    )
    stft_params = StftParams(
        fft_size=int(meta["fft_size"]),
        hop=int(meta["hop"]),
        sample_rate=int(meta["sample_rate"]),
    )
    return Checkpoint(meta["task"], int(meta["step"]), config, stft_params,
                      params, rng_state, optimizer)


def _load_clip(path, rate: int) -> AudioBuffer:
    buf, _ = to_processing_format(read_wav(path), rate)
    return buf


def _random_crop(buf: AudioBuffer, num_samples: int, rng) -> AudioBuffer:
    if buf.num_frames <= num_samples:
        return loop_to_length(buf, num_samples)
    offset = int(rng.integers(0, buf.num_frames - num_samples + 1))
    return AudioBuffer(buf.samples[offset : offset + num_samples].copy(),
                       buf.sample_rate)


class _ClipCache:
    """Small read-through cache so the loop does not re-parse WAVs."""

    def __init__(self, rate: int):
        self.rate = rate
        self._store: dict = {}

    def get(self, path) -> AudioBuffer:
        if path not in self._store:
            self._store[path] = _load_clip(path, self.rate)
        return self._store[path]


def sample_training_tuple(task: str, rng, clips: _ClipCache,
                          clean_paths, noise_paths, speaker_map,
                          snr_grid, plus_snr_grid, crop_samples: int,
                          reference_mode: str = "disjoint") -> MixTuple:
    """Draw one randomized tuple for the given task."""
    rate = clips.rate
    ref_samples = int(round(REFERENCE_SECONDS * rate))

    def noise_window():
        path = noise_paths[int(rng.integers(len(noise_paths)))]
        return _random_crop(clips.get(path), crop_samples + ref_samples, rng)

    if task == "separator":
        ids = sorted(speaker_map)
        a, b = rng.choice(len(ids), size=2, replace=False)
        id_a, id_b = ids[int(a)], ids[int(b)]

        def pick_two(speaker_id):
            utts = speaker_map[speaker_id]
            if len(utts) < 2:
                raise CorpusError(
                    f"speaker {speaker_id} needs at least 2 utterances"
                )
            i, j = rng.choice(len(utts), size=2, replace=False)
            return utts[int(i)], utts[int(j)]

        utt_a, ref_a = pick_two(id_a)
        utt_b, ref_b = pick_two(id_b)
        return make_separation_tuple(
            _random_crop(clips.get(utt_a), crop_samples, rng),
            _random_crop(clips.get(utt_b), crop_samples, rng),
            _random_crop(clips.get(ref_a), ref_samples, rng),
            _random_crop(clips.get(ref_b), ref_samples, rng),
            gender_a=id_a[0],
            gender_b=id_b[0],
        )

    clean_path = clean_paths[int(rng.integers(len(clean_paths)))]
    clean = _random_crop(clips.get(clean_path), crop_samples, rng)
    minus_snr = float(snr_grid[int(rng.integers(len(snr_grid)))])
    if task == "denoiser":
        return make_denoising_tuple(clean, noise_window(), minus_snr,
                                    reference_mode)
    plus_snr = float(plus_snr_grid[int(rng.integers(len(plus_snr_grid)))])
    return make_selective_tuple(clean, noise_window(), noise_window(),
                                plus_snr, minus_snr, reference_mode)


def tuple_loss_graph(model: EnhancementModel, item: MixTuple) -> ad.Tensor:
    """Signal-approximation loss for one tuple."""
    spec = stft(item.noisy, model.stft_params)
    noisy_mag = np.abs(spec.data)
    target_mag = np.abs(stft(item.target, model.stft_params).data)
    plus = model.embedding_graph(item.plus_rec, "positive")
    minus = model.embedding_graph(item.minus_rec, "negative")
    mask = model.mask_graph(log_magnitude(spec), plus, minus)
    est = ad.mul(mask, ad.constant(noisy_mag))
    return ad.mean_squared_error(est, target_mag)


def training_step(model: EnhancementModel, batch, adam: ad.AdamState) -> float:
    losses = [tuple_loss_graph(model, item) for item in batch]
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    total = ad.mul(total, ad.constant(np.asarray(1.0 / len(batch))))
    value = float(total.value)
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite training loss: {value}")
    total.backward()
    ad.adam_step(adam, model.parameters())
    return value


def _manifest_paths(manifest: CorpusManifest, role: str):
    return [e.path for e in manifest.entries if e.role == role]


def _speaker_map(manifest: CorpusManifest):
    out: dict = {}
    for e in manifest.entries:
        if e.role not in ("clean", "noise"):
            out.setdefault(e.role, []).append(e.path)
    return {k: sorted(v) for k, v in sorted(out.items())}


def train(config: TrainConfig, log=None) -> Checkpoint:
    """Run the optimizer loop; returns (and writes) the final checkpoint."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    model = EnhancementModel(config.task, config.model_config(),
                             StftParams(), seed=config.seed)
    adam = ad.AdamState(model.parameters(), lr=config.lr)
    rate = model.stft_params.sample_rate
    clips = _ClipCache(rate)
    crop_samples = int(round(config.crop_seconds * rate))

    if config.task == "separator":
        manifest = scan_corpus(config.speaker_root, "speaker")
        train_split = split_manifest_by_role(manifest, (0.5, 0.25, 0.25),
                                             config.seed)["train"]
        speaker_map = _speaker_map(train_split)
        if len(speaker_map) < 2:
            raise CorpusError("separator training needs at least two speakers")
        clean_paths = noise_paths = []
    else:
        clean_all = scan_corpus(config.clean_root, "clean")
        noise_all = scan_corpus(config.noise_root, "noise")
        clean_paths = split_manifest(clean_all, (0.8, 0.1, 0.1),
                                     config.seed)["train"].paths()
        noise_paths = split_manifest(noise_all, (0.8, 0.1, 0.1),
                                     config.seed)["train"].paths()
        if not clean_paths or not noise_paths:
            raise CorpusError("training split is empty")
        speaker_map = {}

    checkpoint = None
    for step in range(1, config.steps + 1):
        batch = [
            sample_training_tuple(
                config.task, rng, clips, clean_paths, noise_paths, speaker_map,
                config.snr_grid, config.plus_snr_grid, crop_samples,
                config.reference_mode,
            )
            for _ in range(config.batch_size)
        ]
        loss = training_step(model, batch, adam)
        if log is not None:
            log(f"{step}\t{loss!r}")
        if step % config.eval_interval == 0 or step == config.steps:
            checkpoint = model_to_checkpoint(
                model, step, rng.bit_generator.state, adam
            )
            save_checkpoint(checkpoint, config.checkpoint_path)
    return checkpoint


def _eval_metrics(target: AudioBuffer, interference: AudioBuffer,
                  estimate: AudioBuffer) -> dict:
    sdr, sir, sar = bss_eval([target, interference], estimate, 0)
    return {
        "lsd": lsd(target, estimate),
        "ssnr": ssnr(target, estimate),
        "mcd": mcd(target, estimate),
        "stoi": stoi(target, estimate),
        "sdr": sdr,
        "sir": sir,
        "sar": sar,
    }


def evaluate(cp: Checkpoint, manifest: CorpusManifest, grid,
             pairs_per_cell: int = 4, seed: int = 0,
             mask_override=None) -> dict:
    """Score the checkpointed model over a grid of mixing conditions.

    Returns {"enhanced": MetricReport, "baseline": MetricReport} where the
    baseline scores the unprocessed noisy input against the same target.
    """
    model = checkpoint_to_model(cp)
    rng = np.random.default_rng(seed)
    rate = model.stft_params.sample_rate
    clips = _ClipCache(rate)

    crop_samples = int(round(2.0 * rate))
    enhanced_pairs = []
    baseline_pairs = []

    def run_pair(group, item: MixTuple):
        interference = AudioBuffer(
            item.noisy.samples - item.target.samples, rate
        )
        out = enhance(model, item.noisy, item.plus_rec, item.minus_rec,
                      mask_override=mask_override)
        enhanced_pairs.append((group, _eval_metrics(item.target, interference, out)))
        baseline_pairs.append(
            (group, _eval_metrics(item.target, interference, item.noisy))
        )

    if model.task == "separator":
        speaker_map = _speaker_map(manifest)
        if len(speaker_map) < 2:
            raise TaskMismatchError(
                "separator evaluation needs a speaker manifest"
            )
        for _ in range(pairs_per_cell * 3):
            item = sample_training_tuple(
                "separator", rng, clips, [], [], speaker_map,
                (0.0,), (0.0,), crop_samples,
            )
            run_pair(item.tag, item)
        grouping = "pairing"
    else:
        clean_paths = _manifest_paths(manifest, "clean")
        noise_paths = _manifest_paths(manifest, "noise")
        if not clean_paths or not noise_paths:
            raise TaskMismatchError(
                f"{model.task} evaluation needs clean and noise entries"
            )
        cells = list(grid)
        if not cells:
            raise ValueError("empty evaluation grid")
        for cell in cells:
            for _ in range(pairs_per_cell):
                if model.task == "denoiser":
                    item = sample_training_tuple(
                        "denoiser", rng, clips, clean_paths, noise_paths, {},
                        (float(cell),), (0.0,), crop_samples,
                    )
                    run_pair(float(cell), item)
                else:
                    plus_snr, minus_snr = cell
                    item = sample_training_tuple(
                        "selective_denoiser", rng, clips, clean_paths,
                        noise_paths, {}, (float(minus_snr),),
                        (float(plus_snr),), crop_samples,
                    )
                    run_pair((float(plus_snr), float(minus_snr)), item)
        grouping = "snr_db" if model.task == "denoiser" else "plus/minus_snr_db"

    return {
        "enhanced": aggregate_report(enhanced_pairs, grouping),
        "baseline": aggregate_report(baseline_pairs, grouping),
    }
