"""
Logging setup shared by the CLI and the tools scripts

Console output stays at the level of stage summaries; the rotating log file
receives everything down to DEBUG, including per-degree engine chatter.
"""
import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

CONSOLE_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
FILE_FORMAT = '%(asctime)s [%(levelname)s] %(name)s:%(lineno)d: %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
DEFAULT_LOG_FILE = 'logs/birkhoff.log'
LOG_FILE_MAX_BYTES = 10 * 1024 * 1024
LOG_FILE_BACKUPS = 5

_FALSY = ('', '0', 'false', 'none', 'off')


class ConsoleProgressFilter(logging.Filter):
    """
    Passes WARNING and above, except known solver noise from the oracle.
    INFO from the symbolic modules only gets through when it reports a
    finished stage or a resonance.
    """

    SYMBOLIC_MODULES = frozenset({'src.jetcalc', 'src.classical_reduction', 'src.birkhoff_engine'})

    STAGE_MARKERS = (
        'Darboux chart built',
        'Tubular map built',
        'Reduced Hamiltonian',
        'Normal form complete',
        'Williamson',
        'Well expansion',
        'esonance',
    )

    # eigensolver retries are logged per attempt; the final SolverError is what matters
    SOLVER_NOISE = {'src.numerical_oracle': ('lobpcg did not reach',)}

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        if record.levelno >= logging.WARNING:
            noise = self.SOLVER_NOISE.get(record.name, ())
            return not any(marker in message for marker in noise)
        if record.levelno < logging.INFO:
            return False
        if record.name in self.SYMBOLIC_MODULES:
            return any(marker in message for marker in self.STAGE_MARKERS)
        return True


def _resolve_level(log_level: Optional[str]) -> int:
    name = (log_level or os.getenv('LOG_LEVEL', 'INFO')).upper()
    return getattr(logging, name, logging.INFO)


def _resolve_log_file(log_file: Optional[str]) -> Optional[Path]:
    if log_file is None:
        log_file = os.getenv('LOG_FILE', DEFAULT_LOG_FILE)
    if log_file.strip().lower() in _FALSY:
        return None
    path = Path(log_file)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def setup_logging(log_level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger for one process

    Args:
        log_level: DEBUG, INFO, WARNING, ... (defaults to $LOG_LEVEL, then INFO)
        log_file: rotating log path; '', '0', 'false', 'none' disable it
                  (defaults to $LOG_FILE, then logs/birkhoff.log)
    """
    level = _resolve_level(log_level)
    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()

    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt=DATE_FORMAT))
    if os.getenv('CONSOLE_FILTER', 'true').strip().lower() not in _FALSY:
        console.addFilter(ConsoleProgressFilter())
    root.addHandler(console)

    path = _resolve_log_file(log_file)
    if path is not None:
        handler = RotatingFileHandler(path, maxBytes=LOG_FILE_MAX_BYTES, backupCount=LOG_FILE_BACKUPS)
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(handler)

    return root
