#!/usr/bin/env python3
"""
Coupled data-model market engine
Command-line entry: generate, solve, shapley, envelope, fee, baseline, experiment, validate
"""

import sys
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from backend.cli import run

if __name__ == "__main__":
    sys.exit(run())
