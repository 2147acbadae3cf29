"""Deep submodular functions: construction, verification, optimization and learning."""
from ._backend import get_threads, numba_available, set_threads, use_numba
from .analysis import (antitone_cross_differences, check_abc_function, check_fk_membership,
                       classify_two_layer_scmm, expand_two_layer_scmm, grouped_surplus,
                       is_modular_at, surplus, symmetrize, symmetrize_five_vector,
                       verify_k_multi_submodular, verify_properties)
from .concave import ConcaveUnit
from .core import (DsfError, GroundMismatchError, GroundSet, InvalidInputError, ModularFunction,
                   SetFunction, Subset, VerificationReport, from_table, modular_set_function)
from .dsf import (DsfModel, DsfNode, InvalidModelError, MultivariateAssignment, concave_extension,
                  evaluate, evaluate_difference, evaluate_multivariate, gradient_input,
                  gradient_weights, validate_model)
from .learn import (Dataset, TrainConfig, fit_max_margin, fit_regression, numeric_gradient_check,
                    project_parameters, random_init, rebind_ground)
from .optimize import (cardinality, greedy_max, hamming_loss, knapsack, loss_augmented_inference,
                       lovasz_extension, naive_greedy, relaxed_hamming_distance)

__version__ = "0.1.0"
