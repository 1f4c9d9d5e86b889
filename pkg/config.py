"""DTSL config"""

VERSION = "1.0.0"
TITLE = "DTSL"

# Numerics
EPS_LOG = 1e-12  # clamp before every log
EPS_DICE = 1e-5
FD_STEP = 1e-5

# Networks
NUM_CLASSES = 4  # class 0 is background
BASE_CHANNELS = 8
KERNEL_SIZE = 3

# Training defaults
MAX_ITER = 3000
LABELED_BATCH = 4
UNLABELED_BATCH = 4
ETA0 = 1e-3
LR_POWER = 0.9
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
OMEGA = 0.95
KAPPA = 0.05
ALPHA = 1.0
BETA = 0.05
SEED = 1
SNAPSHOT_EVERY = 200
PROBE_SIZE = 4
EVAL_BATCH = 10

# Synthetic corpus
IMAGE_SIZE = 64
TRAIN_COUNT = 200
TEST_COUNT = 50
NOISE_SIGMA = 0.08
LABELED_FRACTION = 0.1
MAX_SAMPLE_RETRIES = 50

# Gray level per class; 1 and 3 overlap slightly so thresholding is not enough
CLASS_INTENSITIES = {
    0: 0.10,
    1: 0.62,
    2: 0.32,
    3: 0.70,
    4: 0.86,
    5: 0.48,
}
INTENSITY_JITTER = 0.04

# Training modes
MODES = {
    "semi": {
        "name": "SemiDTSL",
        "groups": 2,
        "unlabeled": True,
        "pace": "clg",
        "url": True,
        "description": "Two groups, CLG pseudo-labels on labeled and unlabeled data"
    },
    "supervised": {
        "name": "SupervisedDTSL",
        "groups": 2,
        "unlabeled": False,
        "pace": "clg",
        "url": True,
        "description": "Two groups, labeled data only, pace regulator kept"
    },
    "plain": {
        "name": "SupervisedPlain",
        "groups": 2,
        "unlabeled": False,
        "pace": None,
        "url": False,
        "description": "Two independent students trained with L_sup only"
    },
    "mt": {
        "name": "VanillaMT",
        "groups": 1,
        "unlabeled": True,
        "pace": "teacher",
        "url": False,
        "description": "Single group, own teacher's argmax as pseudo-labels, no URL term"
    },
    "plain-dtsl": {
        "name": "PlainDTSL",
        "groups": 2,
        "unlabeled": True,
        "pace": "mean",
        "url": True,
        "description": "Two groups, argmax of the mean everywhere (no masking)"
    },
    "supervised-mt": {
        "name": "SupervisedMT",
        "groups": 1,
        "unlabeled": False,
        "pace": "teacher",
        "url": True,
        "description": "Mean teacher on labeled data only"
    },
}

# CLG pairings for student 0; group 1 swaps every index
STRATEGIES = {
    "default": ("student1", "teacher0"),
    "strategy1": ("teacher1", "student1"),
    "strategy2": ("teacher0", "teacher1"),
    "strategy3": ("teacher0", "teacher1", "student1"),
}

# Sweep grids
SWEEP_GRIDS = {
    "kappa": [0.01, 0.05, 0.1, 0.15],
    "kappa_wide": [0.01, 0.05, 0.1, 0.15, 0.2, 0.3],
    "omega": [0.90, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99],
    "alpha": [0.50, 0.75, 1.0, 1.25, 1.50],
    "alpha_small": [0.05, 0.10, 0.15, 0.20, 0.30],
    "beta": [0.01, 0.05, 0.10, 0.50, 1.00],
    "beta_small": [0.01, 0.05, 0.10, 0.20, 0.30],
    "strategy": ["default", "strategy1", "strategy2", "strategy3"],
}
SWEEP_PARAMS = ["omega", "kappa", "alpha", "beta", "strategy"]

# Module ablation rows: (label, MT, Plain DTSL, CLG, URL, overrides)
ABLATION_ROWS = [
    ("MT", True, False, False, False, {"mode": "mt", "beta": 0.0}),
    ("Plain DTSL", False, True, False, False, {"mode": "plain-dtsl", "beta": 0.0}),
    ("CLG", False, False, True, False, {"mode": "semi", "beta": 0.0}),
    ("Plain DTSL + URL", False, True, False, True, {"mode": "plain-dtsl"}),
    ("CLG + URL", False, False, True, True, {"mode": "semi"}),
]

# Reporting
MODEL_NAMES = ["student0", "teacher0", "student1", "teacher1"]
HEADLINE_MODEL = "student0"
METRIC_NAMES = ["dsc", "jaccard", "hd95", "asd"]
LOSS_COLUMNS = ["iter", "sup", "semi", "url", "pace", "total_l", "total_u", "cons_fraction"]
PROBE_COLUMNS = ["iter", "agreement_t0", "agreement_t1", "cons_fraction"]
METRIC_COLUMNS = ["model", "class", "dsc", "jaccard", "hd95", "asd"]
FLOAT_FORMAT = "{:.6g}"

# Debug output
DEBUG_DIR = "debug"
MAX_LOG_ENTRIES = 1000

# Sweep / ablation tables
SWEEP_COLUMNS = ["run", "param", "value", "mode", "strategy", "omega", "kappa", "alpha", "beta", "seed",
                 "status", "dsc", "jaccard", "hd95", "asd", "error"]
ABLATION_COLUMNS = ["row", "MT", "Plain DTSL", "CLG", "URL", "runs", "status",
                    "dsc", "jaccard", "hd95", "asd", "check"]
ABLATION_CHECK = ("CLG + URL", "Plain DTSL")  # first row's DSC should not fall below the second's
