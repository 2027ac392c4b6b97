"""Shared instance catalog and helpers for the test suite."""

import numpy as np
import pytest

from stochinv import (
    Arborescence,
    Argsort,
    BinaryTree,
    Matching,
    SpanningTree,
    ThetaVector,
    TopK,
)


def complete_graph(n):
    return [(u, v) for u in range(n) for v in range(u + 1, n)]


def complete_digraph(n):
    return [(u, v) for u in range(n) for v in range(n) if u != v]


def small_instances():
    """Every enumerable instance the acceptance suite sweeps, with a name."""
    out = []
    for d in range(1, 7):
        for k in range(1, d + 1):
            out.append((f"top_k_d{d}_k{k}", TopK(d, k)))
    for d in range(1, 7):
        out.append((f"argsort_d{d}", Argsort(d)))
    for n in range(1, 5):
        out.append((f"matching_n{n}", Matching(n)))
    for n in range(1, 7):
        out.append((f"binary_tree_n{n}", BinaryTree(n)))
    for n in range(2, 6):
        out.append((f"kruskal_K{n}", SpanningTree(range(n), complete_graph(n))))
    for n in range(2, 5):
        out.append((f"cle_K{n}", Arborescence(range(n), complete_digraph(n), 0)))
    return out


def representative_instances():
    """One moderately sized instance per structure family."""
    return [
        ("top_k", TopK(4, 2)),
        ("argsort", Argsort(4)),
        ("matching", Matching(3)),
        ("binary_tree", BinaryTree(4)),
        ("kruskal", SpanningTree(range(4), complete_graph(4))),
        ("cle", Arborescence(range(4), complete_digraph(4), 0)),
    ]


def seeded_theta(sdef, seed, scale=0.7):
    rng = np.random.default_rng(1000 + seed)
    return ThetaVector(sdef.key_labels, rng.uniform(-scale, scale, sdef.n_keys))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
