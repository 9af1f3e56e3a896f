#!/usr/bin/env python3
"""Launcher for the training, ablation and evaluation commands (see src/cli.py)."""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
