import os
import logging
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Get logger for config module
config_logger = logging.getLogger(__name__)

# Logging Configuration
# Applied by the CLI entry point only; library code never calls basicConfig
LOG_LEVEL = os.getenv("NETGLM_LOG_LEVEL", "INFO").upper()

# Penalized pseudolikelihood (MPLE) Configuration
# lambda_n = LAMBDA_C * sqrt(log d / n); the constant is a tuning choice
LAMBDA_C = float(os.getenv("NETGLM_LAMBDA_C", 0.5))
MPLE_TOL = float(os.getenv("NETGLM_MPLE_TOL", 1e-7))
MPLE_MAX_ITER = int(os.getenv("NETGLM_MPLE_MAX_ITER", 5000))

# Projection QP Configuration
# Radii constants for the constraint set; doubled on infeasibility
QP_C1 = float(os.getenv("NETGLM_QP_C1", 1.0))
QP_C2 = float(os.getenv("NETGLM_QP_C2", 1.0))
QP_C3 = float(os.getenv("NETGLM_QP_C3", 2.0))
QP_MAX_INFLATIONS = int(os.getenv("NETGLM_QP_MAX_INFLATIONS", 6))

# Sampler Configuration
# One iteration = one full systematic sweep over all sites
GIBBS_SWEEPS = int(os.getenv("NETGLM_GIBBS_SWEEPS", 2000))

# Inference Configuration
ALPHA = float(os.getenv("NETGLM_ALPHA", 0.05))

# Report Templates Configuration
# Optional directory whose templates take priority over the packaged defaults
TEMPLATES_DIR = os.getenv("NETGLM_TEMPLATES_DIR", "").strip() or None


# Worker Pool Configuration
# Options:
#   - positive integer (caps the replicate worker pool)
#   - unset (defaults to the CPU count)
#   - anything else (warning, falls back to the CPU count)
def _parse_threads_config() -> int:
    """Parse and validate NETGLM_THREADS configuration."""
    default = os.cpu_count() or 1
    raw = os.getenv("NETGLM_THREADS", "").strip()

    if not raw:
        return default

    try:
        value = int(raw)
    except ValueError:
        config_logger.warning(f"⚠️ Invalid NETGLM_THREADS '{raw}', falling back to {default}")
        return default

    if value < 1:
        config_logger.warning(f"⚠️ NETGLM_THREADS must be >= 1 (got {value}), falling back to {default}")
        return default

    config_logger.info(f"🧵 Worker pool capped at {value} (NETGLM_THREADS)")
    return value


# Parse worker cap on startup
THREADS = _parse_threads_config()
