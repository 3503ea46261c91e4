"""Bayesian convolutional spiking neural networks in numpy.

LIF neurons trained with surrogate gradients through time, rate and
first-spike output codes, and Monte Carlo dropout uncertainty with triage.
"""

__version__ = "0.1.0"

from .bayes import (PredictiveSummary, UncertaintyReport, mc_predict, mc_predict_batch,
                    mc_probabilities, mutual_information, predictive_entropy, triage)
from .coding import (RATE, TEMPORAL_INVERSE, TEMPORAL_NEGATIVE, FirstSpikeTimes, SpikeRecord,
                     encode_constant_current, first_spike_decode, rate_decode, softmax,
                     softmax_cross_entropy, temporal_logits)
from .data import (Dataset, SplitSpec, augment, load_dataset, load_image_dataset, save_dataset,
                   split, synthetic_dataset)
from .errors import (BCSNNError, CheckpointError, DatasetError, DimensionError, InvalidParameterError,
                     TapeError, TrainingDivergedError, ValidationError)
from .models import ArchitectureSpec, build_desk_model, build_paper_model, summary
from .network import Network, bptt_backward, load_checkpoint, replay, save_checkpoint
from .neuron import LifParams, LifState, beta_from_tau, fast_sigmoid, lif_step, surrogate_grad
from .trainer import Adam, ClassMetrics, TrainConfig, compare_codings, evaluate, train
