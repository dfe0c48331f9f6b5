#!/usr/bin/env python3
"""
Main entry point for the heteroscedastic selection toolkit

Usage:
    python3 run_selection.py deconv-fit --input data.csv            # Fit the effect-size prior
    python3 run_selection.py select --input data.csv --mu0 0        # Prioritized selection
    python3 run_selection.py rvalue --input data.csv --mu0 0        # r-values (vary alpha)
    python3 run_selection.py simulate --design uniform --sigma-max 3 --reps 50
"""
import os
import sys

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scripts'))

from hetsel.cli import main

if __name__ == "__main__":
    sys.exit(main())
