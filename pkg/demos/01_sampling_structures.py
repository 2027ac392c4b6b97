"""Sampling structures by perturbing a greedy recursion.

Every distribution in this package is defined the same way: attach an
independent exponential utility to each key (item, cell, or edge), run a
greedy algorithm on the utilities, and return its output.  The rate of
key k is exp(-theta_k), so pushing theta_k down makes k win more often.
"""

import numpy as np

from stochinv import (
    Arborescence,
    Argsort,
    BinaryTree,
    Matching,
    SpanningTree,
    ThetaVector,
    TopK,
    run_struct,
    sample_utilities,
)

rng = np.random.default_rng(0)

# --- subsets: the k items with the smallest perturbed values -------------
top2 = TopK(d=5, k=2)
theta = ThetaVector.constant(top2.key_labels)
for _ in range(3):
    x, trace = run_struct(top2, sample_utilities(theta, rng))
    print("subset:", sorted(x), "   selection order:", trace.winners())

# Biasing theta: item 3 gets rate exp(2) ~ 7.4, so it is picked early.
biased = ThetaVector(top2.key_labels, [0.0, 0.0, 0.0, -2.0, 0.0])
hits = sum(3 in run_struct(top2, sample_utilities(biased, rng))[0] for _ in range(1000))
print(f"\nwith theta_3 = -2, item 3 appears in {hits / 10:.1f}% of subsets")

# --- permutations, matchings, binary trees -------------------------------
perm, _ = run_struct(Argsort(4), sample_utilities(ThetaVector.constant(range(4)), rng))
print("\npermutation:", perm)

match_def = Matching(3)
matching, _ = run_struct(match_def, sample_utilities(ThetaVector.constant(match_def.key_labels), rng))
print("matching:   ", sorted(matching))

tree_def = BinaryTree(5)
tree, _ = run_struct(tree_def, sample_utilities(ThetaVector.constant(range(5)), rng))
print("binary tree:", tree)

# --- spanning trees and arborescences ------------------------------------
edges = [(u, v) for u in range(4) for v in range(u + 1, 4)]
mst_def = SpanningTree(range(4), edges)
tree, _ = run_struct(mst_def, sample_utilities(ThetaVector.constant(mst_def.key_labels), rng))
print("spanning tree:", sorted(tree))

arcs = [(u, v) for u in range(3) for v in range(3) if u != v]
arb_def = Arborescence(range(3), arcs, root=0)
arb, _ = run_struct(arb_def, sample_utilities(ThetaVector.constant(arb_def.key_labels), rng))
print("arborescence:", sorted(arb))

# The trace records every argmin the recursion took; the structure is a
# deterministic function of it, which is what makes exact probabilities
# and low-variance estimators possible (see the next demos).
