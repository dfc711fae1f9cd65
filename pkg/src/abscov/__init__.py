"""Site-specific multi-aerial-base-station coverage planning toolkit."""

from .channel import (Association, ChannelParams, CoverageReport, associate,
                      evaluate_coverage, marcum_q1, max_cluster_size,
                      outage_prob, pathloss_db, rician_k)
from .env import (BuildingBlock, Environment, GuState, abs_position_valid,
                  generate_environment, is_los, step_gus)
from .gridmap import (FeatureNiche, Pattern, binary_mask, feature_of, quantize,
                      to_positions, to_sequence)
from .mission import (MissionSetup, TimeConfig, TrialResult, move_step,
                      run_ges_bound, run_trial)
from .predictor import (EmulatorPredictor, ExactOracle, e_bce, forward,
                        load_model, save_model, spp, threshold)
from .search import (MoveConstraints, SearchBudget, ckmeans_init, ges,
                     map_elites, mutate, nm_search)

__version__ = "0.1.0"
