#!/usr/bin/env python3
"""
MFC Lab Runner
Runs an experiment config or replays a manifest from the command line.

Usage:
    python run_mfc_lab.py run configs/chaos_linear_drift.json
    python run_mfc_lab.py replay results/chaos_linear_drift/manifest.json
"""

import sys

from mfclab.cli import main

if __name__ == "__main__":
    sys.exit(main())
