"""Continual learning with quadratic penalties built from (sketched) task Jacobians."""
from .errors import (DegenerateRankError, DivergenceError, IdxFormatError, IdxLengthError,
                     InvalidArgumentError, MissingDataError, SingularGramError)
from .models import (Dataset, LinearFeatureMap, ParamVector, RandomReluFeatures, TwoLayerRelu,
                     empirical_ntk, jacobian, ntk_gram, predict)
from .regularizers import (PenaltyState, SketchMatrix, Variant, accumulate, build_approx_jacobian,
                           memory_cost, penalty_gradient, penalty_value)
from .trainer import (TrainConfig, joint_train, run_joint_sequence, run_sequence,
                      single_head_accuracy, train_first_task, train_next_task)

__version__ = "0.1.0"
