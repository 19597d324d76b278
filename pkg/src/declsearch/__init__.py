"""declsearch: two-mode declaration search and global premise retrieval.

Standard mode embeds an informalized declaration corpus and serves
cosine-retrieve-then-rerank search; reasoning mode plans proof sketches,
retrieves per step, filters, judges feasibility and revises, aggregating the
surviving lists by rank discount.  Evaluation and prover-loop harnesses sit on
top of both.
"""

from . import corpus, evaluation, prover, providers, reasoning, retrieval

__all__ = ["corpus", "evaluation", "prover", "providers", "reasoning", "retrieval"]
__version__ = "0.1.0"
