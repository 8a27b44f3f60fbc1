"""
main.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Entry point for the transport-mode detection toolkit.
    Configures logging and hands the command line to src/cli.py.
"""

import logging
import sys

from src.cli import main


def configure_logging(verbose: bool = False):
    """INFO by default, DEBUG with --verbose."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')


if __name__ == '__main__':
    configure_logging("--verbose" in sys.argv or "-v" in sys.argv)
    sys.exit(main())
