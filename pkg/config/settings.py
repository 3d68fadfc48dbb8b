import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Get the project root directory
project_root = Path(__file__).parent.parent
env = os.getenv("ENVIRONMENT", "local")

# In production the variables are set by the process environment directly;
# locally they come from config/env.<environment> or a project-root .env
if env != "production":
    env_file = project_root / f"config/env.{env}"
    if env_file.exists():
        load_dotenv(env_file)
    else:
        fallback_env = project_root / ".env"
        if fallback_env.exists():
            load_dotenv(fallback_env)

TABR_DATA_DIR = os.getenv("TABR_DATA_DIR", str(project_root / "data"))
TABR_RUN_DIR = os.getenv("TABR_RUN_DIR", str(project_root / "runs" / "latest"))
TABR_LOG_LEVEL = os.getenv("TABR_LOG_LEVEL", "INFO")
TABR_DTYPE = os.getenv("TABR_DTYPE", "float32")


def configure_logging(level: str | None = None) -> None:
    """Configure root logging once for scripts and the API."""
    logging.basicConfig(
        level=getattr(logging, (level or TABR_LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def resolve_dataset_dir(name_or_path: str) -> Path:
    """A path that exists is used as is; otherwise the name is looked up under TABR_DATA_DIR."""
    candidate = Path(name_or_path)
    if candidate.is_dir():
        return candidate
    return Path(os.getenv("TABR_DATA_DIR", TABR_DATA_DIR)) / name_or_path
