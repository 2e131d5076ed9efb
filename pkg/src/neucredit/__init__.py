"""Time-value-aware recurrent networks for interpretable credit risk."""

from .numerics import (DomainError, ParamSet, Rng, ShapeError, Tensor,
                       backward, finite_diff_grad, grad, no_grad)
from .cells import (CellState, LstmParams, TlstmParams, TvaLstmParams,
                    lstm_step, tlstm_step, tva_discount, tva_lstm_step)
from .fusion import fc_fuse, mvm_fuse
from .network import (FlatConfig, HierarchicalModel, NetworkConfig,
                      SequenceModel, build_model, encode_subsequence)
from .training import (TrainingConfig, TrainingDiverged, batch_loss, bce,
                       conditional_loss, train)
from .data import (ConsumerSequence, DataValidationError, FeatureScaler,
                   FlatSequence, LoanEvent, five_fold_split,
                   generate_portfolio, generate_synthetic, load_consumer_dataset,
                   load_flat_dataset, pad_and_mask, pad_flat)
from .evaluation import (ExperimentResult, LogisticRegression, auc,
                         run_experiment)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
