"""Configuration management for the discretization bias lab."""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
DOTENV_PATH = Path(__file__).resolve().parents[1] / ".env"
load_dotenv(dotenv_path=DOTENV_PATH, override=False)

logger = logging.getLogger(__name__)


class Config:
    """Application configuration."""

    # Seeds
    DGP_SEED: int = int(os.getenv("DBIAS_DGP_SEED", "20200817"))  # parameter draw, shipped
    ROOT_SEED: int = int(os.getenv("DBIAS_ROOT_SEED", "1"))

    # Experiment scale (desk defaults)
    WORKERS: int = int(os.getenv("DBIAS_WORKERS", "1"))
    REPLICATIONS: int = int(os.getenv("DBIAS_REPLICATIONS", "200"))
    SUBJECTS: int = int(os.getenv("DBIAS_SUBJECTS", "1000"))
    TRUTH_SAMPLES: int = int(os.getenv("DBIAS_TRUTH_SAMPLES", "200000"))
    BOOTSTRAP_REPLICATES: int = int(os.getenv("DBIAS_BOOTSTRAP_REPLICATES", "500"))
    T_STAR: int = int(os.getenv("DBIAS_T_STAR", "257"))

    # Numerical core
    PROB_FLOOR: float = float(os.getenv("DBIAS_PROB_FLOOR", "1e-6"))
    IRLS_MAX_ITER: int = int(os.getenv("DBIAS_IRLS_MAX_ITER", "100"))
    POLICY_GUARD: int = int(os.getenv("DBIAS_POLICY_GUARD", "1000000"))

    # Output
    OUTPUT_DIR: str = os.getenv("DBIAS_OUTPUT_DIR", "results")
    LOG_LEVEL: str = os.getenv("DBIAS_LOG_LEVEL", "INFO").upper()

    # FastAPI configuration
    TITLE: str = "Discretization Bias Lab API"
    VERSION: str = "0.1.0"

    def __post_init__(self) -> None:
        """Post-initialization validation."""
        self._validate()

    def _validate(self) -> None:
        """Warn about settings that would make runs fail later."""
        if self.WORKERS < 1:
            logger.warning("DBIAS_WORKERS=%d < 1 - falling back to serial execution", self.WORKERS)
            self.WORKERS = 1

        if self.REPLICATIONS < 2:
            logger.warning("DBIAS_REPLICATIONS=%d - sweeps need at least 2", self.REPLICATIONS)

        if self.TRUTH_SAMPLES < 1000:
            logger.warning("DBIAS_TRUTH_SAMPLES=%d is below the oracle minimum of 1000",
                           self.TRUTH_SAMPLES)

        if not 0.0 < self.PROB_FLOOR < 0.5:
            logger.warning("DBIAS_PROB_FLOOR=%g outside (0, 0.5) - using 1e-6", self.PROB_FLOOR)
            self.PROB_FLOOR = 1e-6

        if self.LOG_LEVEL not in logging.getLevelNamesMapping():
            logger.warning("Unknown DBIAS_LOG_LEVEL=%s - using INFO", self.LOG_LEVEL)
            self.LOG_LEVEL = "INFO"


def configure_logging(level: str | None = None) -> None:
    """Install the root handler used by the CLI and the API."""
    logging.basicConfig(
        level=level or config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# Global configuration instance
config = Config()
config.__post_init__()
