"""Utility modules for Distill Tools"""

from .helpers import format_db, from_db, read_csv, to_db, write_csv

__all__ = ['format_db', 'from_db', 'read_csv', 'to_db', 'write_csv']
