"""Backdoor data-poisoning attack and defense lab for deep regression.

The pipeline: an exact down-and-out put pricer labels training data for a
ReLU MLP surrogate; an attacker plants mislabeled samples in a localized
backdoor region; gradient ascent finds local error maximizers; a proximity
based defense flags anomalous interpolation error, removes the suspect
samples and retrains.
"""

from .attack import AttackConfig, BackdoorRegion, build_attack_sets
from .config import ExperimentConfig, load_config
from .features import (Bounds, DEFAULT_BOUNDS, Dataset, concat,
                       generate_dataset, is_valid, label_oracle, normalize,
                       denormalize, sample_valid)
from .mlp import (Metrics, MlpModel, TrainConfig, evaluate, forward,
                  init_model, input_gradient, load_model, save_model, train)
from .pricing import (RawMarketPoint, PricingDomainError, down_and_out_put,
                      price_down_and_out_put, price_monte_carlo, vanilla_put)
from .search import (AscentConfig, CuckooConfig, LocalMaximizer, ascend,
                     cuckoo_search, dedup, error_gradient, random_valid_seeds,
                     select_seeds)
from .defense import (DefenseReport, ProximityIndex, active_learning_round,
                      count_proximal, detect_suspicious, profile_maximizers,
                      retrain_weighted)

__version__ = "0.1.0"
