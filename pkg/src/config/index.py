from dotenv import load_dotenv
import os

load_dotenv()


def _positive_int_env(name: str, default: str) -> int:
    raw_value = os.getenv(name, default)
    try:
        value = int(raw_value)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw_value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value


if not os.getenv("SYNCLAB_OUTPUT_ROOT", "runs").strip():
    raise ValueError("SYNCLAB_OUTPUT_ROOT must not be empty when set in .env file")

appConfig = {
    "output_root": os.getenv("SYNCLAB_OUTPUT_ROOT", "runs"),
    "log_dir": os.getenv("SYNCLAB_LOG_DIR", "logs"),
    "log_level": os.getenv("LOG_LEVEL", "INFO").upper(),
    "workers": _positive_int_env("SYNCLAB_WORKERS", "1"),
    # Long-running experiments in tests/ are skipped unless this is set
    "run_acceptance": os.getenv("SYNCLAB_RUN_ACCEPTANCE", "0") == "1",
}
