"""Configuration for the mchmm estimation toolkit."""

import os
import subprocess
from pathlib import Path

# Application version
APP_VERSION = "1.0.0"


def _get_git_info():
    """Get git commit hash and branch if available."""
    try:
        commit = subprocess.check_output(
            ["git", "rev-parse", "--short", "HEAD"],
            stderr=subprocess.DEVNULL,
            cwd=Path(__file__).parent.parent
        ).decode().strip()
        branch = subprocess.check_output(
            ["git", "rev-parse", "--abbrev-ref", "HEAD"],
            stderr=subprocess.DEVNULL,
            cwd=Path(__file__).parent.parent
        ).decode().strip()
        return commit, branch
    except Exception:
        return None, None


GIT_COMMIT, GIT_BRANCH = _get_git_info()

# Base paths
TEMPLATES_DIR = Path(__file__).parent / "templates"
OUTPUT_DIR = Path(os.environ.get("MCHMM_OUTPUT_DIR", "runs"))

LOG_LEVEL = os.environ.get("MCHMM_LOG_LEVEL", "INFO").upper()


# Worker cap for replica, start and replication pools
def _get_max_workers():
    """Read MCHMM_THREADS, falling back to the CPU count."""
    raw = os.environ.get("MCHMM_THREADS", "")
    try:
        value = int(raw)
    except ValueError:
        value = os.cpu_count() or 1
    return max(1, value)


MAX_WORKERS = _get_max_workers()

# Reference parameters of the low-prevalence regime (lambda, mu, alpha, nu)
REFERENCE_PARAMS = {"lambda": 0.05, "mu": 0.2, "alpha": 0.1, "nu": 0.015}
DEFAULT_SEED = 0
DEFAULT_HORIZON = 10_000.0
DEFAULT_DT = 1.0

# ODE integration (master equations and moment system)
ODE_ATOL = 1e-10
ODE_RTOL = 1e-8
LEAK_TOLERANCE = 1e-6

# Truncation
DEFAULT_N_STATE = 3
MIN_M_OBS = 2
MAX_CORRECTION_DEFICIT = 0.05
MIN_ROW_VISITS = 50

# Baum-Welch
FIT_MAX_ITER = 500
FIT_TOL = 1e-9
FIT_STARTS = 15
INIT_PATHS = 10
INIT_STEPS = 10_000
INIT_RANGES = {
    "lambda": (0.04, 0.07),
    "mu": (0.185, 0.25),
    "alpha": (0.09, 0.130),
    "nu": (0.013, 0.02),
}

# Chain simulation for moment recovery
BURN_IN = 1_000
CHAIN_STEPS = 1_000_000
CI_BATCHES = 50
