"""Neural transducer with a latent hard monotonic alignment, for continuous outputs."""

from .autodiff import ParameterStore, Tape, Tensor, backward, grad_check
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .data import CorpusConfig, DataFormatError, Utterance, gen_corpus, generate, load_split
from .decode import DecodeConfig, DecodeResult, synthesize
from .estimator import SSNTSynthesizer
from .metrics import EvalReport, evaluate
from .model import ModelConfig, init_params, nll, run_model
from .train import AdamState, TrainConfig, fit_params, train_loop
from .trellis import (TrellisError, TrellisGrid, best_path, brute_force_likelihood,
                      forward_backward, forward_pass)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Checkpoint", "CheckpointError", "ConfigError", "CorpusConfig",
    "DataFormatError", "DecodeConfig", "DecodeResult", "EvalReport", "ModelConfig",
    "ParameterStore", "RunConfig", "SSNTSynthesizer", "Tape", "Tensor", "TrainConfig",
    "TrellisError", "TrellisGrid", "Utterance", "backward", "best_path",
    "brute_force_likelihood", "evaluate", "fit_params", "forward_backward", "forward_pass",
    "gen_corpus", "generate", "grad_check", "init_params", "load_checkpoint",
    "load_run_config", "load_split", "nll", "run_model", "save_checkpoint", "synthesize",
    "train_loop",
]
