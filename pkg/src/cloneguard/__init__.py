"""Desk-scale lab for training and evaluating stealing-resistant classifiers.

Trains small victim networks whose outputs isolate an adversary's update
direction from the useful one and minimize the information a stealing query
yields, attacks them with query-budgeted simulators, and measures clone
accuracy, relative performance, and inference cost.
"""

from .autodiff import AutodiffError, ComputationRecord, Tensor, grad_tensors, no_record
from .data import LabeledDataset, make_id_blobs, make_ood_shifted, make_surrogate
from .functional import cosine_similarity, kl_divergence, softmax_cross_entropy
from .losses import (LossBundle, LossCoefficients, induction_loss,
                     information_gain, isolation_loss, total_loss,
                     weighted_logprob_grad)
from .nets import Classifier, CheckpointError, load_checkpoint, save_checkpoint
from .params import ParamVector, grad
from .surgery import GradientSet, pcgrad
from .training import TrainConfig, TrainTrace, anneal_lr, train_victim
from .attacks import AttackConfig, BudgetExceededError, QueryOracle
from .harness import (CostModel, ExperimentReport, evaluate, predict_cost,
                      bench_inference, run_experiment, reference_config)

__version__ = "0.1.0"
