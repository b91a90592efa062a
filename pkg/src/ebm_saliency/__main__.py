#!/usr/bin/env python3
"""
ebm_saliency package entry point

Allows: python -m ebm_saliency <command> [options]
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
