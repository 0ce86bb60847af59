"""Conditional reconstructor, spectral loss, training and evaluation."""
from .field import FiLMHeads, NeuralField, grid_encoding, hermitian_symmetrize, overwrite_measured, to_complex
from ..numerics import film_modulate
from .loss import LossReport, spectral_loss, weighted_sq_error
from .model import (
    GROUPS, Features, Sample, VisFuseModel, analytic_parameter_count, prepare_sample, reconstruct,
)
from .training import (
    EvalResult, TrainResult, evaluate, history_csv, load_checkpoint, read_manifest,
    save_checkpoint, select_training_subset, train,
)
