"""
Purpose: Main entry point script

High-level Overview:
Standalone entry point that allows running the tool with `python vseg.py [commands]` by importing and executing the CLI interface.

Key Components:
- Path setup for package imports
- CLI interface execution
"""

import sys
from pathlib import Path

# Add package to path
sys.path.insert(0, str(Path(__file__).parent))

from vessel_segmentation.cli import cli

if __name__ == '__main__':
    cli()
