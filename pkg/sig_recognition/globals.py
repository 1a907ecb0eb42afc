DEFAULT_DEPTH = 2
MAX_DEPTH = 6
DEFAULT_DTW_RADIUS = 1
DEFAULT_TIE_TOLERANCE = 1e-9
DEFAULT_GOAL_TOLERANCE = 1e-9

MODES = ("plain", "dtw")
AGGREGATIONS = ("max", "incremental_mean")
DTW_REDUCTIONS = ("mean", "sum")
INTERPOLATIONS = ("linear",)
MODE_ENV_VAR = "SIG_RECOGNITION_MODE"

# Thresholds are squared Euclidean distances between signature vectors
DEFAULT_MERGE_GRID = tuple(round(0.2 * i, 1) for i in range(11))
DEFAULT_PRUNE_GRID = DEFAULT_MERGE_GRID
DEFAULT_K_GRID = (1, 5, 10, 15)
ADOPTED_THRESHOLDS = {
    "plain": {"eps_merge": 0.2, "eps_prune": 0.2},
    "dtw": {"eps_merge": 0.2, "eps_prune": 0.6},
}
DEFAULT_FRACTIONS = tuple(i / 7 for i in range(1, 7))

TREE_FORMAT_VERSION = 1

REPORT_COLUMNS = [
    "scope",
    "fraction",
    "ppv",
    "ppv_std",
    "ppv_ci",
    "acc",
    "acc_std",
    "acc_ci",
    "spr",
    "spr_std",
    "pc",
    "pc_std",
    "online_s",
    "online_s_std",
    "offline_s",
    "offline_s_std",
    "n_problems",
]
GRID_COLUMNS = ["eps_merge", "eps_prune", "n_trajectories", "depth", "mode", "ppv", "violations"]

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_VALIDATION_VIOLATION = 2
