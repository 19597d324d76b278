"""Independent brute-force metric oracles.

Deliberately written against plain lists/sets (never the package's RankedList
machinery) so they stay an independent check on the evaluation module.
"""
from __future__ import annotations

import math
from typing import Sequence


def oracle_ndcg(names: Sequence[str], gt: str, k: int) -> float:
    for one_indexed_rank, name in enumerate(list(names)[:k], start=1):
        if name == gt:
            return 1.0 / math.log2(one_indexed_rank + 1)
    return 0.0


def oracle_recall(names: Sequence[str], gt: str, k: int) -> float:
    return 1.0 if gt in list(names)[:k] else 0.0


def oracle_group_recall(names: Sequence[str], groups: Sequence[set[str]], k: int) -> float:
    topk = set(list(names)[:k])
    hits = sum(1 for group in groups if any(member in topk for member in group))
    return hits / len(groups)


def oracle_covered(names: Sequence[str], routings: Sequence[Sequence[set[str]]], k: int) -> int:
    topk = set(list(names)[:k])
    for routing in routings:
        if all(any(member in topk for member in group) for group in routing):
            return 1
    return 0
