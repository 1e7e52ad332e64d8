"""Capacity of q-ary fingerprinting games under the Marking Assumption."""

from .asymptotics import (asymptotic_capacity, capacity_vs_q, convergence_study,
                          max_payoff_on_sphere)
from .channel import (Params, channel_matrix, check_bias, covariance, enumerate_tallies,
                      multinomial_prob, tally_index)
from .errors import (CapacityError, DimensionError, DomainError, NonConvergenceError,
                     NumericalError, SingularityError, SizeError, SupportCapError,
                     UnsupportedError)
from .gammamap import (GammaMap, InterleavingMap, PerturbedInterleavingMap, interleaving_gamma,
                       random_marking_map, strategy_to_gamma)
from .payoff import (asymptotic_payoff_p, asymptotic_payoff_u, fisher_information_matrix,
                     fisher_trace, jacobian_spectrum, mutual_information, payoff_gradient_theta)
from .simulate import (BiasFamily, CodeMatrix, collude, empirical_mutual_information,
                       generate_code, sample_bias, verify_marking)
from .solver import (BiasDistribution, GameSolution, best_response_theta, duality_gap,
                     solve_maximin, solve_minimax, worst_case_p)
from .strategy import (Strategy, interleaving_strategy, random_strategy, symmetrize,
                       validate_strategy)

__version__ = "0.1.0"
