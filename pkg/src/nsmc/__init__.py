"""Semiparametric pairwise rank-comparison estimator for nonlinear bipartite
embeddings, with squared-loss and linear baselines, synthetic generators,
metrics, and a Monte-Carlo verification suite."""

from .activations import ActivationKind, d2phi, dphi, parse_activation, phi, smoothness_q
from .datagen import (EdgeSampleSet, GenerativeSpec, ResponseLaw, SampleSplit,
                      gen_features, gen_ground_truth, gen_mixture_features,
                      gen_similarity_labels, sample_edges, split_samples,
                      union_samples)
from .loss import (LossReport, PairScalars, loss_grad, loss_hessian,
                   loss_hessian_parts, loss_value, make_objective, pair_scalars)
from .model import (FeaturePool, WeightPair, embed, load_weight_pair,
                    normalize_ground_truth, save_weight_pair, theta)
from .optimizer import (DivergenceError, GdConfig, GdTrace, estimate_step,
                        fit_contraction_rate, gd_minimize, init_near_truth)
from .metrics import (clustering_error, kmeans, rel_error_matrix,
                      rel_error_theta, top_r_left_singular)

__version__ = "0.1.0"
