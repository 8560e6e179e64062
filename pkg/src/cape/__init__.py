"""cape: expert-in-the-loop Bayesian causal discovery.

Maintains a particle posterior over weighted DAGs, selects maximally
informative edge queries by expected information gain over the expert's
three-way answer, folds noisy answers in by importance reweighting with
resampling and Metropolis-Hastings rejuvenation, and tracks posterior-quality
metrics throughout.
"""

from .acquisition import (CandidateSet, ExhaustionError, eig,
                          eig_via_expected_kl, entropy3, predictive, screen,
                          select_query, static_eig_ranking)
from .expert import (CategoricalDist3, ConfigurationError, ExpertParams,
                     FeatureSpec, direction_score, likelihood, pair_stats)
from .graphs import (EditKind, GraphEdit, GraphError, WeightedDag, apply_edit,
                     is_acyclic, skeleton, true_label)
from .oracles import (DeterministicOracle, EffectGraphOracle, HumanOracle,
                      SimulatedExpertOracle, answer, build_effect_graph)
from .posterior import (DegeneratePosteriorError, History, ParticleSet,
                        QueryRecord, SurrogatePrior, edge_marginals, ess,
                        rejuvenate, resample, reweight, surrogate_log_prior)
from .priors import bootstrap_linear_prior, erdos_renyi_dag, perturbed_prior
from .session import SessionConfig, run_round, run_session, replay_session

__version__ = "0.1.0"
