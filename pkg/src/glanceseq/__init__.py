"""Classify six-second driver glance sequences with per-class discrete HMMs."""
__version__ = "0.1.0"

from .classifier import (BinaryClassifier, Prediction, classify, select_hidden_states,
                         sliding_window_classify, train_binary)
from .dataset import BinaryProblem, Dataset, LabelSchema, bin_age, enumerate_problems, ingest, split
from .experiment import (ExperimentConfig, ProblemResult, SyntheticSpec, bayes_accuracy_estimate,
                         export_problem_matrices, generate_synthetic, run_all, run_problem)
from .glance import (Epoch, GlanceEvent, GlanceRegion, SampledSequence, information_loss,
                     matrix_difference, resample_epoch, transition_matrix)
from .hmm import DiscreteHmm, TrainConfig, baum_welch_train, forward_log_likelihood, sample_sequence
from .smote import SmoteConfig, hamming_distance, smote_oversample
