#!/usr/bin/env python3
"""
Entry point for running the vessel segmentation toolkit as a module.

Usage: python -m vessel_segmentation [commands]
"""

from .cli import cli

if __name__ == '__main__':
    cli()
