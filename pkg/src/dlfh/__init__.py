"""Discrete latent factor model based cross-modal hashing."""

from .data import (FeatureMatrix, LabelMatrix, SplitSpec, center, load_features, load_labels,
                   make_split, save_features, similarity_from_labels, synth_crossmodal)
from .errors import (ConfigError, ContractError, DLFHError, EvaluationError, FormatError,
                     LoadError, SingularSystemError)
from .model import Hyperparams, KernelSettings, log_likelihood
from .oos import fit_kernel, fit_linear, hash_kernel, hash_linear, load_model, save_model
from .retrieval import (GroundTruth, PackedCodes, load_codes, mean_average_precision, pack,
                        save_codes, unpack)
from .similarity import DenseSimilarity, LabelSimilarity
from .trainer import Mode, TrainConfig, TrainState, train, train_full, train_stochastic

__version__ = "0.1.0"
