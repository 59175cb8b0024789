"""Sandbox worker: one interpreter session per process, driven over stdio."""

__version__ = "0.1.0"
