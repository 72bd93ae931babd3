"""Structured clinical extraction from large-language-model outputs."""

from .core import Snippet, Status, TaskKind, tokenize

__version__ = "0.1.0"

__all__ = ["Snippet", "Status", "TaskKind", "tokenize", "__version__"]
