"""Collaborative filtering with a synthetic feedback loop."""
import os
import sys
import logging

__version__ = "0.1.0"

logging_str = "[%(asctime)s: %(levelname)s: %(module)s: %(message)s]"

# CFSFL_LOG_DIR / CFSFL_LOG_LEVEL redirect and filter the run log
log_dir = os.environ.get("CFSFL_LOG_DIR", "logs")
log_filepath = os.path.join(log_dir, "running_logs.log")
log_level = os.environ.get("CFSFL_LOG_LEVEL", "INFO").upper()
os.makedirs(log_dir, exist_ok=True)


logging.basicConfig(
    level=getattr(logging, log_level, logging.INFO),
    format=logging_str,

    handlers=[
        logging.FileHandler(log_filepath, encoding="utf-8"),
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger("cfsflLogger")
