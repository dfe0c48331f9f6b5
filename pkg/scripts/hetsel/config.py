"""
Runtime configuration for the selection toolkit.

Values come from the environment (optionally a .env file) and can be
overridden per invocation by command-line flags.
"""
import os
import logging
from dotenv import load_dotenv

load_dotenv()


def _env_int(name, default):
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


def _env_float(name, default):
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


# Configuration
class Config:
    # Deconvolution
    GRID_SIZE = _env_int("HETSEL_GRID_SIZE", 50)
    MAX_ITER = _env_int("HETSEL_MAX_ITER", 50000)
    REL_TOL = _env_float("HETSEL_REL_TOL", 1e-10)
    PG_TOL = _env_float("HETSEL_PG_TOL", 1e-6)  # relative to the gradient norm at uniform weights
    STALL_WINDOW = _env_int("HETSEL_STALL_WINDOW", 100)
    KERNEL_BLOCK = _env_int("HETSEL_KERNEL_BLOCK", 1024)  # rows per kernel batch

    # Oracle calibration
    N_MC = _env_int("HETSEL_N_MC", 1_000_000)
    MIN_N_MC = _env_int("HETSEL_MIN_N_MC", 100_000)

    # Scores and rankings
    XI = os.getenv("HETSEL_XI", "tanh")
    RVALUE_POINTS = _env_int("HETSEL_RVALUE_POINTS", 200)

    # Processing
    THREADS = _env_int("HETSEL_THREADS", os.cpu_count() or 1)
    LOG_LEVEL = os.getenv("HETSEL_LOG_LEVEL", "INFO")

    # Feasibility slack for capacity comparisons
    CAPACITY_TOL = 1e-12


LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level=None):
    """Configure root logging the way the command-line entry point expects."""
    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT
    )
