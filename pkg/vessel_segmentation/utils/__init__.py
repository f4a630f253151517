"""Run-directory and dataset-layout helpers."""

from .file_handler import FileHandler

__all__ = ["FileHandler"]
