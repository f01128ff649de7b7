"""Offline extraction of frozen contextual token embeddings to JSONL."""

from .export import ExportJob, ExportError, export, main

__all__ = ["ExportJob", "ExportError", "export", "main"]

__version__ = "0.1.0"
