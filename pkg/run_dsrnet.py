#!/usr/bin/env python3
"""
Main entry point for the DSRNet command-line tool.

Usage:
    python run_dsrnet.py synthesize --source-dir S --out O --count 100
    python run_dsrnet.py train --manifest O/manifest.jsonl --epochs 20
    python run_dsrnet.py infer --checkpoint checkpoints/epoch_020.ckpt --inputs photo.png --out results
    python run_dsrnet.py evaluate --checkpoint checkpoints/epoch_020.ckpt --manifest real20/ --out reports
    python run_dsrnet.py montage --inputs photo.png --results-dir results --out grid.png
"""

import sys
from pathlib import Path

# Add repository root to Python path
sys.path.insert(0, str(Path(__file__).parent))

if __name__ == "__main__":
    from src.cli import main

    sys.exit(main())
