"""
Main entry point for the adagcl command line.
"""

import logging
import sys

from adagcl.config import settings

# Configure logging
logging.basicConfig(level=settings.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

from adagcl.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
