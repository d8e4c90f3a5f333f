#!/usr/bin/env python3
"""
Entry point for the sentence ranker CLI.

Usage: python run.py <synth|train|eval|discriminate|gradcheck|export-embeddings> [flags]
"""

import os
import sys
from pathlib import Path

# Add the current directory to Python path for local imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

# Load environment variables (LOG_LEVEL, RANKER_LOG_FILE) from .env before the package configures logging
try:
    from dotenv import load_dotenv

    env_path = Path(__file__).parent / ".env"
    if env_path.exists():
        load_dotenv(dotenv_path=env_path)
    else:
        load_dotenv()
except ImportError:
    pass

from ranker.cli import main  # noqa: E402


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n🛑 Stopped by user", file=sys.stderr)
        sys.exit(130)
