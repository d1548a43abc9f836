"""Zero-shot recognition by relational matching, test-time adaptation and
scaled calibration, on precomputed features and class descriptors."""

from ._backend import BACKEND
from .adapt import (AdaptConfig, AdaptResult, CorrespondenceMatrix, adapt, adapt_gradient,
                    adapt_objective, adapted_descriptors, assign_classes, frank_wolfe, step_size)
from .classify import (CalibrationConfig, EvalReport, PrototypeSet, classwise_accuracy, evaluate,
                       harmonic_mean, hubness_skewness, n1_histogram, predict,
                       predict_conventional)
from .data import (Dataset, Manifest, SyntheticConfig, class_means, load_dataset, save_dataset,
                   synthesize_dataset, validate_dataset)
from .embed import (EmbeddingNet, RelationalMatrix, TrainConfig, forward, gradients,
                    pointwise_loss, relational_loss, relational_matrices, total_loss, train)
from .errors import DataError, DivergenceError, NumericalError, ZSLError
from .transport import (Marginals, TransportPlan, brute_force_transportation,
                        solve_transportation)

__version__ = "0.1.0"
