"""
Configuration file for the one-sided L_p kernel test

This file contains all the configuration options that users typically need to customize
when running the test on a dataset, computing local power, or running a Monte Carlo
campaign. Command-line flags and JSON config files override these values.
"""

import logging
import os
from pathlib import Path

VERSION = "0.4.0"


class ConfigError(ValueError):
    """Invalid configuration value or configuration file"""


# Test statistic configuration
TEST_CONFIG = {
    # Exponent of the one-sided L_p functional (p >= 1)
    "p": 1.0,

    # "one_sided" tests m_j(x) <= 0, "two_sided" tests m_j(x) = 0
    "mode": "one_sided",

    # Kernel name: "quartic2u", "uniform" or "triangular"
    "kernel": "quartic2u",

    # Either a fixed bandwidth or the rule constant c_h in h = c_h * s_X * n^(-1/5)
    "bandwidth": None,
    "bandwidth_c": 1.0,

    # Integration domain, one (lo, hi) pair per covariate axis.
    # Must sit strictly inside the covariate support (no boundary correction).
    "domain": [[0.05, 0.95]],

    # Options: "uniform", "inverse_se" (w = 1/rho_n(x)), "inverse_se_global"
    "weights": "uniform",

    "alpha": 0.05,

    # Midpoint grid points per axis; None picks 512 for d=1 and 64 per axis otherwise
    "grid_points": None,

    # Gauss-Legendre nodes per half-axis for the u-integral inside q
    "u_nodes": 41,

    # Cells with rho_hat^2 below this are treated as empty
    "degenerate_tol": 1e-12,

    # Upper cap for pointwise inverse standard error weights
    "weight_cap": 1e6,

    # sigma_hat^2 at or below this is a degenerate-variance error
    "variance_tol": 1e-12,
}

# Monte Carlo settings for the normal functionals
MC_CONFIG = {
    "draws": 200_000,
    "seed": 20240601,
    "antithetic": True,
    # Uniform t-grid on [-1, 1] used to interpolate c_p(t)
    "t_grid_size": 201,
}

# Monte Carlo campaign settings (mirrors the published simulation design)
SIMULATION_CONFIG = {
    "dgps": ["dgp0", "dgp1", "dgp2", "dgp3", "dgp4", "dgp5"],
    "n_values": [50, 200, 1000],
    "c_h_values": [0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5],
    "weights": ["uniform", "inverse_se"],
    "replications": 1000,
    "base_seed": 12345,
    "workers": 1,
}

# Local power calculator settings
POWER_CONFIG = {
    # |first-order drift| above this blocks the slower-rate (root_n_h) formulas
    "drift_tolerance": 1e-8,
}

# Output settings
OUTPUT_CONFIG = {
    "json_indent": 2,
    "csv_float_format": "%.10g",
}

# Logging configuration
LOGGING_CONFIG = {
    "log_level": "WARNING",  # Options: DEBUG, INFO, WARNING, ERROR
    "log_to_file": False,
    "log_to_console": True,
    "log_file": "lptest.log",
    "log_format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}

# Environment variables that override the dictionaries above
ENV_OVERRIDES = {
    "LPTEST_LOG_LEVEL": ("LOGGING_CONFIG", "log_level", str),
    "LPTEST_WORKERS": ("SIMULATION_CONFIG", "workers", int),
    "LPTEST_MC_DRAWS": ("MC_CONFIG", "draws", int),
    "LPTEST_MC_SEED": ("MC_CONFIG", "seed", int),
}


def get_test_defaults():
    """Get a copy of the test statistic defaults"""
    defaults = dict(TEST_CONFIG)
    defaults["domain"] = [list(axis) for axis in TEST_CONFIG["domain"]]
    return defaults


def get_mc_defaults():
    """Get a copy of the Monte Carlo defaults"""
    return dict(MC_CONFIG)


def get_simulation_defaults():
    """Get a copy of the campaign defaults"""
    return {key: list(value) if isinstance(value, list) else value
            for key, value in SIMULATION_CONFIG.items()}


def load_env_file(path=".env"):
    """Load a .env file into os.environ if python-dotenv and the file are available"""
    try:
        from dotenv import load_dotenv
    except ImportError:
        return False
    if Path(path).exists():
        return load_dotenv(path)
    return False


def get_runtime_config():
    """Get complete configuration with environment variable overrides applied"""
    sections = {
        "TEST_CONFIG": get_test_defaults(),
        "MC_CONFIG": get_mc_defaults(),
        "SIMULATION_CONFIG": get_simulation_defaults(),
        "POWER_CONFIG": dict(POWER_CONFIG),
        "OUTPUT_CONFIG": dict(OUTPUT_CONFIG),
        "LOGGING_CONFIG": dict(LOGGING_CONFIG),
    }

    for env_name, (section, key, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw is None or raw == "":
            continue
        try:
            sections[section][key] = cast(raw)
        except ValueError as e:
            raise ConfigError(f"Environment variable {env_name}={raw!r} is not a valid {cast.__name__}") from e

    return sections


def setup_logging(logging_config=None):
    """Configure logging for the library and the CLI"""
    cfg = logging_config or LOGGING_CONFIG

    handlers = []
    if cfg.get("log_to_file", False):
        handlers.append(logging.FileHandler(cfg.get("log_file", "lptest.log")))
    if cfg.get("log_to_console", True):
        handlers.append(logging.StreamHandler())

    level_name = str(cfg.get("log_level", "WARNING")).upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(f"Unknown log level: {level_name}")

    logging.basicConfig(
        level=level,
        format=cfg.get("log_format", "%(asctime)s - %(levelname)s - %(message)s"),
        handlers=handlers,
        force=True  # Override any existing configuration
    )
    return logging.getLogger("lptest")
