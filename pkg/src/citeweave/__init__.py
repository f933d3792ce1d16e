"""Citation-network repair toolkit.

Builds citation graphs from publication metadata, augments them with
embedding-similarity edges, re-clusters the result, and reports how the
cluster structure changed.
"""

__version__ = "0.1.0"
