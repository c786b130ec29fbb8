"""Fact extraction and fact-embedding evaluation for chest X-ray reports."""

__version__ = "0.1.0"
