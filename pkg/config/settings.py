import os

from dotenv import load_dotenv

load_dotenv()

# Scene kinds the synthetic generator understands
SCENE_KINDS = [
    "two_cube_hinge",
    "two_cube_split",
    "rope_fixed_end",
    "multibody_drop",
    "soft_none",
]

# Seed override for every command (GDG_SEED wins over config files)
GDG_SEED = os.getenv("GDG_SEED")
DEFAULT_SEED = int(os.getenv("GDG_DEFAULT_SEED", "0"))

# Neighborhood size for kNN features and spatial gradients
DEFAULT_KNN = int(os.getenv("GDG_KNN", "20"))

# Network sizes
DEFAULT_NUM_HANDLES = int(os.getenv("GDG_NUM_HANDLES", "4"))
DEFAULT_HIDDEN_WIDTH = int(os.getenv("GDG_HIDDEN_WIDTH", "64"))
DEFAULT_EIGEN_LAYERS = int(os.getenv("GDG_EIGEN_LAYERS", "6"))
DEFAULT_MATERIAL_BLOCKS = int(os.getenv("GDG_MATERIAL_BLOCKS", "2"))
DEFAULT_GLOBAL_TOKENS = int(os.getenv("GDG_GLOBAL_TOKENS", "512"))

# Optimizer and loss weights
DEFAULT_LEARNING_RATE = float(os.getenv("GDG_LEARNING_RATE", "1e-3"))
DEFAULT_EPOCHS = int(os.getenv("GDG_EPOCHS", "2000"))
DEFAULT_STAGE1_FRACTION = float(os.getenv("GDG_STAGE1_FRACTION", "0.3"))
DEFAULT_WEIGHT_RECON = float(os.getenv("GDG_WEIGHT_RECON", "1e3"))
DEFAULT_WEIGHT_ORTHO = float(os.getenv("GDG_WEIGHT_ORTHO", "0.1"))
DEFAULT_WEIGHT_ENERGY = float(os.getenv("GDG_WEIGHT_ENERGY", "1.0"))
DEFAULT_WEIGHT_STIFFNESS_REG = float(os.getenv("GDG_WEIGHT_STIFFNESS_REG", "1e2"))
DEFAULT_GRAD_CLIP = float(os.getenv("GDG_GRAD_CLIP", "10.0"))

# Negative sampling
DEFAULT_NOISE_GAMMA = float(os.getenv("GDG_NOISE_GAMMA", "0.5"))
DEFAULT_ENERGY_FLOOR = float(os.getenv("GDG_ENERGY_FLOOR", "1e-8"))

# Untracked (Chamfer-supervised) frames are subsampled to this many points
DEFAULT_CHAMFER_SUBSAMPLE = int(os.getenv("GDG_CHAMFER_SUBSAMPLE", "2048"))

# Material parameterization (normalized stiffness units)
DEFAULT_YOUNGS_MIN = float(os.getenv("GDG_YOUNGS_MIN", "1e-2"))
DEFAULT_YOUNGS_SCALE = float(os.getenv("GDG_YOUNGS_SCALE", "1e4"))
DEFAULT_POISSON_RATIO = float(os.getenv("GDG_POISSON_RATIO", "0.45"))
CORRECTED_NEOHOOKEAN = os.getenv("GDG_CORRECTED_NEOHOOKEAN", "false").lower() == "true"

# Newton solver
DEFAULT_NEWTON_MAX_ITERS = int(os.getenv("GDG_NEWTON_MAX_ITERS", "25"))
DEFAULT_NEWTON_TOL = float(os.getenv("GDG_NEWTON_TOL", "1e-6"))
DEFAULT_LINE_SEARCH_FACTOR = float(os.getenv("GDG_LINE_SEARCH_FACTOR", "0.5"))
DEFAULT_MAX_BACKTRACKS = int(os.getenv("GDG_MAX_BACKTRACKS", "20"))

# How often the training loop prints a progress line
LOG_EVERY_EPOCHS = int(os.getenv("GDG_LOG_EVERY", "50"))
