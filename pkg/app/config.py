import os
from pathlib import Path


def _env_bool(name: str, default: str) -> bool:
    return os.environ.get(name, default) == '1'


def _env_int(name: str, default: str) -> int:
    raw_value = os.environ.get(name, default)
    try:
        return int(raw_value)
    except (TypeError, ValueError) as exc:
        raise RuntimeError(f"{name} must be an integer value, got {raw_value!r}.") from exc


def _env_float(name: str, default: str) -> float:
    raw_value = os.environ.get(name, default)
    try:
        return float(raw_value)
    except (TypeError, ValueError) as exc:
        raise RuntimeError(f"{name} must be a number, got {raw_value!r}.") from exc


def _env_str(name: str, default: str) -> str:
    raw_value = os.environ.get(name, default)
    return raw_value.strip() or default


class Config:
    BASE_DIR = Path(__file__).resolve().parent.parent

    # Logging
    LOG_LEVEL = _env_str('SIM_LOG_LEVEL', 'INFO').upper()

    # Output
    # Run directories are created below this path unless --out is given.
    OUTPUT_DIR = _env_str('SIM_OUTPUT_DIR', 'out')
    # Used when neither the scenario nor the command line names a seed.
    DEFAULT_SEED = _env_int('SIM_DEFAULT_SEED', '42')

    # Traffic
    # Poisson arrival times are rounded to 1/ARRIVAL_RESOLUTION seconds.
    ARRIVAL_RESOLUTION = _env_int('SIM_ARRIVAL_RESOLUTION', '1000000')

    # Engine
    # Stops a run that keeps failing without the clock moving.
    MAX_ROUNDS = _env_int('SIM_MAX_ROUNDS', '1000000')

    # Sweeps
    MAX_WORKERS = _env_int('SIM_MAX_WORKERS', '1')
    ORDERING_THRESHOLD = _env_float('SIM_ORDERING_THRESHOLD', '0.8')

    # Reference oracle limits
    ORACLE_MAX_FLOWS = _env_int('SIM_ORACLE_MAX_FLOWS', '8')
    ORACLE_MAX_PACKETS = _env_int('SIM_ORACLE_MAX_PACKETS', '10')

    # Reports
    WRITE_EVENT_LOG = _env_bool('SIM_WRITE_EVENT_LOG', '1')


def validate_config(config: type[Config] = Config) -> None:
    errors: list[str] = []

    if config.LOG_LEVEL not in {'DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'}:
        errors.append(f"SIM_LOG_LEVEL must be a logging level name. Current value: {config.LOG_LEVEL}.")
    if config.ARRIVAL_RESOLUTION < 1:
        errors.append("SIM_ARRIVAL_RESOLUTION must be at least 1.")
    if config.MAX_ROUNDS < 1:
        errors.append("SIM_MAX_ROUNDS must be at least 1.")
    if config.MAX_WORKERS < 1:
        errors.append("SIM_MAX_WORKERS must be at least 1.")
    if not 0.0 <= config.ORDERING_THRESHOLD <= 1.0:
        errors.append("SIM_ORDERING_THRESHOLD must be between 0 and 1.")
    if config.DEFAULT_SEED < 0:
        errors.append("SIM_DEFAULT_SEED must be non-negative.")

    if errors:
        raise RuntimeError("Invalid simulator configuration:\n- " + "\n- ".join(errors))
