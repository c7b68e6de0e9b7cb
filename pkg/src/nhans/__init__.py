"""Reference-conditioned audio enhancement.

A pair of auxiliary encoders turns short positive/negative reference
recordings into embeddings that steer a mask-estimation network, giving
one model family three behaviours: full denoising, selective noise
suppression, and two-speaker separation.
"""

from .audio_io import AudioBuffer, PROCESSING_RATE, read_wav, resample, write_wav
from .dsp import Spectrogram, StftParams, istft, log_magnitude, stft
from .errors import (CheckpointError, CorpusError, MalformedWavError,
                     MetricError, NhansError, ShapeError, TaskMismatchError,
                     UnsupportedCodecError)
from .metrics import MetricReport, aggregate_report, bss_eval, lsd, mcd, ssnr, stoi
from .mixing import (CorpusManifest, MixTuple, make_denoising_tuple,
                     make_selective_tuple, make_separation_tuple, mix_at_snr,
                     read_manifest, scan_corpus, split_manifest, write_manifest)
from .model import (EnhancementModel, ModelConfig, denoise, enhance,
                    encode_reference, estimate_mask, mute_recording,
                    selective_denoise, separate)
from .training import (Checkpoint, TrainConfig, checkpoint_to_model, evaluate,
                       load_checkpoint, load_config, model_to_checkpoint,
                       parse_config, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "PROCESSING_RATE", "read_wav", "resample", "write_wav",
    "Spectrogram", "StftParams", "istft", "log_magnitude", "stft",
    "NhansError", "MalformedWavError", "UnsupportedCodecError", "ShapeError",
    "CorpusError", "CheckpointError", "MetricError", "TaskMismatchError",
    "MetricReport", "aggregate_report", "bss_eval", "lsd", "mcd", "ssnr", "stoi",
    "CorpusManifest", "MixTuple", "make_denoising_tuple", "make_selective_tuple",
    "make_separation_tuple", "mix_at_snr", "read_manifest", "scan_corpus",
    "split_manifest", "write_manifest",
    "EnhancementModel", "ModelConfig", "denoise", "enhance", "encode_reference",
    "estimate_mask", "mute_recording", "selective_denoise", "separate",
    "Checkpoint", "TrainConfig", "checkpoint_to_model", "evaluate",
    "load_checkpoint", "load_config", "model_to_checkpoint", "parse_config",
    "save_checkpoint", "train",
    "__version__",
]
