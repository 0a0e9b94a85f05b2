#!/usr/bin/env python3
"""
WPMEC Launch Script

Runs the wpmec command-line interface, e.g.

    python main.py solve configs/reference.ini --seed 1 --out result.json
    python main.py sweep-power configs/fig1.ini --out fig1.csv
"""

import sys

from dotenv import load_dotenv

from wpmec.cli import main

if __name__ == "__main__":
    # Load environment variables (WPMEC_THREADS, WPMEC_LOG_LEVEL, WPMEC_LOG_DIR) from .env
    load_dotenv()
    sys.exit(main(sys.argv[1:]))
