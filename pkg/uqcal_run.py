import logging.config
import sys

from cli.cli import main
from log_settings.settings import logger_config

logging.config.dictConfig(logger_config)

if __name__ == "__main__":
    sys.exit(main())
