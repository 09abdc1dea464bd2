#!/usr/bin/env python3
"""Main entry point for neurorating."""

import sys

from neurorating.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
