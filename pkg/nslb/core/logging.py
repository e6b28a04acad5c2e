# =============================================================================
# NSLB - LOGGING CONFIGURATION
# =============================================================================

"""
Centralized logging configuration for the library and its CLI.
"""

import logging
import logging.handlers
from pathlib import Path
from typing import Dict, Any, Optional
import sys

from ..config import Settings, settings as default_settings


class ColoredFormatter(logging.Formatter):
    """Custom formatter to add colors to log levels."""

    COLORS = {
        'DEBUG': '\033[36m',     # Cyan
        'INFO': '\033[32m',      # Green
        'WARNING': '\033[33m',   # Yellow
        'ERROR': '\033[31m',     # Red
        'CRITICAL': '\033[35m',  # Magenta
        'RESET': '\033[0m'       # Reset
    }

    def format(self, record):
        log_color = self.COLORS.get(record.levelname, self.COLORS['RESET'])
        reset_color = self.COLORS['RESET']

        # Color a copy so the file handler sees the plain level name
        record = logging.makeLogRecord(record.__dict__)
        record.levelname = f"{log_color}{record.levelname}{reset_color}"

        return super().format(record)


def setup_logging(config: Optional[Settings] = None) -> Dict[str, Any]:
    """Setup logging: colored console output plus a rotating log file."""
    config = config or default_settings
    level = getattr(logging, config.log_level.upper(), logging.INFO)

    log_path = Path(config.log_file)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_fmt = '%(asctime)s | %(levelname)s | %(name)s | %(message)s'
    if config.log_color:
        console_formatter = ColoredFormatter(fmt=console_fmt, datefmt='%Y-%m-%d %H:%M:%S')
    else:
        console_formatter = logging.Formatter(fmt=console_fmt, datefmt='%Y-%m-%d %H:%M:%S')
    console_handler.setFormatter(console_formatter)

    file_handler = logging.handlers.RotatingFileHandler(
        filename=str(log_path),
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5,
        encoding='utf-8'
    )
    file_handler.setLevel(level)
    file_formatter = logging.Formatter(
        fmt='%(asctime)s | %(levelname)s | %(name)s | %(funcName)s:%(lineno)d | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    file_handler.setFormatter(file_formatter)

    root_logger.addHandler(console_handler)
    root_logger.addHandler(file_handler)

    configure_specific_loggers(level)

    return {
        "console_handler": console_handler,
        "file_handler": file_handler,
        "log_level": config.log_level,
        "log_file": str(log_path)
    }


def configure_specific_loggers(level: int = logging.INFO):
    """Configure specific loggers for different components."""

    # Worker pool chatter
    logging.getLogger("joblib").setLevel(logging.WARNING)

    # Numerical services follow the configured level
    for name in ("nslb.services", "nslb.routers"):
        logging.getLogger(name).setLevel(level)

