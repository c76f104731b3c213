from pathlib import Path
import logging
from pydantic import BaseModel, Field
import os
from dotenv import load_dotenv

load_dotenv()

OUTPUT_DIR_ENV = "DICON_OUTPUT_DIR"


class LogSettings(BaseModel):
    """Logging configuration settings."""
    directory: str = Field(default="outputs/logs", description="Base directory for log files")
    subdirectories: dict = Field(
        default={
            "ndgrad": "ndgrad",
            "spritegen": "spritegen",
            "training": "training",
            "evaluation": "evaluation",
            "cli": "cli",
            "tests": "tests",
        },
        description="Subdirectories for component-specific logs"
    )


def _file_handler(logger: logging.Logger):
    return next((h for h in logger.handlers if isinstance(h, logging.FileHandler)), None)


def setup_logger(name: str, subdirectory: str = "training") -> logging.Logger:
    """Configure a logger for a specific component."""
    settings = LogSettings(directory=str(Path(os.getenv(OUTPUT_DIR_ENV, "outputs")) / "logs"))
    log_dir = Path(settings.directory) / subdirectory
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / f"{name.lower()}.log"

    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    if not logger.handlers:
        stream_handler = logging.StreamHandler()
        stream_handler.setFormatter(formatter)
        logger.addHandler(stream_handler)

    # the output directory can change between calls; follow it
    current = _file_handler(logger)
    if current is None or current.baseFilename != os.path.abspath(log_file):
        if current is not None:
            logger.removeHandler(current)
            current.close()
        file_handler = logging.FileHandler(log_file, mode='a')
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.info(f"Logging initialized to {log_file}")
    return logger
