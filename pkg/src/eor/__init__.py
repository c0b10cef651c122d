"""Ensemble-of-retrievers question answering toolkit.

A library plus CLI that runs a pool of retrieval pipelines against a question
set, selects one answer per question with a weighted-similarity voter, trains
the voter weights with a box-bounded Nelder-Mead search, and analyzes
cross-retriever inconsistency and error structure.
"""

__version__ = "0.1.0"
