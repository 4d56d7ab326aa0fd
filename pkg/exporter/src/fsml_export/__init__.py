"""Corpus-to-FSML embedding export."""

from .export import Corpus, Encoder, ExportError, ExportJob, export, read_corpus

__version__ = "0.1.0"
