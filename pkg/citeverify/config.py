import logging
import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    CROSSREF_MAILTO = os.getenv("CROSSREF_MAILTO")
    S2_API_KEY = os.getenv("S2_API_KEY")
    CACHE_DIR = os.getenv("CITEVERIFY_CACHE", ".citeverify_cache")
    LOG_FILE = os.getenv("CITEVERIFY_LOG_FILE")
    LOG_LEVEL = os.getenv("CITEVERIFY_LOG_LEVEL", "INFO")


def configure_logging(level=None):
    """
    Configure root logging for command-line runs.

    Diagnostics go to stderr, plus CITEVERIFY_LOG_FILE when it is set.
    """
    log_handlers = [logging.StreamHandler()]
    if Config.LOG_FILE:
        log_handlers.append(logging.FileHandler(Config.LOG_FILE))

    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=log_handlers,
        force=True,
    )
