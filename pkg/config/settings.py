"""Application configuration settings"""
import os
from pathlib import Path

# Base directory
BASE_DIR = Path(__file__).resolve().parent.parent

# Synthetic clips and fixture models
DATA_DIR = os.getenv("RELEVANCE_DATA_DIR", os.path.join(BASE_DIR, "data"))

# One sub-directory per run is created here
OUTPUT_DIR = os.getenv("RELEVANCE_OUTPUT_DIR", os.path.join(BASE_DIR, "runs"))

# ATR configuration
DEFAULT_SIGMA = float(os.getenv("RELEVANCE_SIGMA", "0.975"))
DEFAULT_MODE = os.getenv("RELEVANCE_MODE", "clrp")

# Only correct predictions scoring above this are analyzed
SCORE_THRESHOLD = 0.5

# Propagation rule constants
ZBETA_LOW = -1.0
ZBETA_HIGH = 1.0
POOL_EPSILON = 1e-9
RESIDUAL_EPSILON = 1e-12

# Execution
DEFAULT_WORKERS = int(os.getenv("RELEVANCE_WORKERS", "1"))
DEFAULT_SEED = int(os.getenv("RELEVANCE_SEED", "0"))

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
