import logging

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

_global_log_level = logging.INFO  # Default global log level
_configured: set[str] = set()


def set_global_log_level(level: str = "INFO") -> None:
    """Set the global logging level, including loggers that already exist."""
    global _global_log_level
    _global_log_level = getattr(logging, level.upper(), logging.INFO)
    for name in _configured:
        logging.getLogger(name).setLevel(_global_log_level)


def setup_logger(name: str) -> logging.Logger:
    """Set up a logger with console (stderr) output using the global log level."""
    logger = logging.getLogger(name)
    logger.setLevel(_global_log_level)  # Use the global log level
    if name not in _configured:
        handler = logging.StreamHandler()
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.propagate = False
        _configured.add(name)
    return logger
