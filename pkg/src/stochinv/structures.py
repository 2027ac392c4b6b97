"""Concrete structure definitions: subsets, orderings, matchings, trees.

Each class realizes one greedy recursion over the shared interface in
``core``: repeatedly take per-partition minima of the perturbed input and
shrink the problem.  All of them have the property that the recursion's
inputs stay independent exponentials given the winners so far, which is
what makes their trace probabilities exact.

Keys are dense integers internally; ``key_labels`` carries the
caller-facing names (item indices, matrix cells, edge tuples).  Structure
values are expressed in label space.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import StructureDefinition
from .errors import (
    InfeasibleGraphError,
    InvalidArgumentError,
    InvalidParameterError,
)

TreeNode = namedtuple("TreeNode", ["key", "left", "right"])


class TopK(StructureDefinition):
    """The k smallest of d items, as an unordered subset.

    One partition per level (everything still in play); the winner leaves
    the pool and the remaining count decrements, so the trace is the
    selection order while the value forgets it.
    """

    def __init__(self, d: int, k: int):
        if not 1 <= k <= d:
            raise InvalidParameterError(f"need 1 <= k <= d, got k={k}, d={d}")
        self.d = d
        self.k = k
        self.key_labels = tuple(range(d))

    def initial_state(self):
        return frozenset(range(self.d)), self.k

    def stop(self, K, R):
        return R == 0 or not K

    def split(self, K, R):
        return [tuple(sorted(K))]

    def map(self, K, R, winners):
        return K - {winners[0]}, R - 1

    def combine(self, child, K, R, winners):
        return (child or frozenset()) | {winners[0]}

    def finish(self, value):
        return value if value is not None else frozenset()

    def encode_value(self, value):
        return tuple(sorted(value))

    def validate_value(self, value):
        return validate(value, "subset", keys=self.key_labels, k=self.k)


class Argsort(StructureDefinition):
    """All d items ordered by increasing perturbed value.

    Identical control flow to TopK with k = d, but the winner order is
    kept, so the value and the trace carry the same information.
    """

    def __init__(self, d: int):
        if d < 1:
            raise InvalidParameterError(f"need d >= 1, got {d}")
        self.d = d
        self.key_labels = tuple(range(d))

    def initial_state(self):
        return frozenset(range(self.d)), None

    def stop(self, K, R):
        return not K

    def split(self, K, R):
        return [tuple(sorted(K))]

    def map(self, K, R, winners):
        return K - {winners[0]}, None

    def combine(self, child, K, R, winners):
        return (winners[0],) + (child or ())

    def finish(self, value):
        return value if value is not None else ()

    def validate_value(self, value):
        return validate(value, "permutation", keys=self.key_labels)


class Matching(StructureDefinition):
    """A perfect matching between the rows and columns of an n-by-n grid.

    The minimum surviving cell joins the matching and its whole row and
    column drop out; after n rounds every row and column is used once.
    """

    def __init__(self, n: int):
        if n < 1:
            raise InvalidParameterError(f"need n >= 1, got {n}")
        self.n = n
        self.key_labels = tuple((r, c) for r in range(n) for c in range(n))

    def initial_state(self):
        return frozenset(range(self.n * self.n)), None

    def stop(self, K, R):
        return not K

    def split(self, K, R):
        return [tuple(sorted(K))]

    def map(self, K, R, winners):
        row, col = self.key_labels[winners[0]]
        keep = frozenset(
            k for k in K
            if self.key_labels[k][0] != row and self.key_labels[k][1] != col
        )
        return keep, None

    def combine(self, child, K, R, winners):
        return (child or frozenset()) | {self.key_labels[winners[0]]}

    def finish(self, value):
        return value if value is not None else frozenset()

    def encode_value(self, value):
        return tuple(sorted(value))

    def validate_value(self, value):
        return validate(value, "matching", n=self.n)


class BinaryTree(StructureDefinition):
    """A binary tree over n tokens whose in-order traversal is 0..n-1.

    The auxiliary state is the list of surviving token spans.  Each span's
    minimum becomes a parent; the tokens to its left and right form the
    child spans of the next level.  Empty child spans are simply skipped;
    ``combine`` re-derives which side was empty from the winners, so the
    child values stay aligned without placeholders.
    """

    def __init__(self, n: int):
        if n < 1:
            raise InvalidParameterError(f"need n >= 1, got {n}")
        self.n = n
        self.key_labels = tuple(range(n))

    def initial_state(self):
        return frozenset(range(self.n)), ((0, self.n - 1),)

    def stop(self, K, R):
        return not K

    def split(self, K, R):
        return [tuple(range(lo, hi + 1)) for lo, hi in R]

    def map(self, K, R, winners):
        spans = []
        for (lo, hi), w in zip(R, winners):
            if w > lo:
                spans.append((lo, w - 1))
            if w < hi:
                spans.append((w + 1, hi))
        return K - frozenset(winners), tuple(spans)

    def combine(self, child, K, R, winners):
        subtrees = iter(child or ())
        out = []
        for (lo, hi), w in zip(R, winners):
            left = next(subtrees) if w > lo else None
            right = next(subtrees) if w < hi else None
            out.append(TreeNode(w, left, right))
        return tuple(out)

    def finish(self, value):
        return value[0] if value else None

    def validate_value(self, value):
        return validate(value, "binary_tree", n=self.n)


class SpanningTree(StructureDefinition):
    """A spanning tree of an undirected graph, grown greedily edge by edge.

    The auxiliary state maps each vertex to its component root.  The
    minimum surviving edge merges two components; edges that become
    internal disappear.  A partition that empties while several components
    remain means the graph was disconnected.
    """

    def __init__(self, vertices: Iterable, edges: Iterable):
        self.vertices = tuple(sorted(set(vertices)))
        if not self.vertices:
            raise InvalidParameterError("need at least one vertex")
        seen = set()
        labels = []
        for u, v in edges:
            if u == v:
                raise InvalidParameterError(f"self-loop on vertex {u!r}")
            if u not in self.vertices or v not in self.vertices:
                raise InvalidParameterError(f"edge ({u!r}, {v!r}) has unknown endpoint")
            edge = (u, v) if u <= v else (v, u)
            if edge in seen:
                raise InvalidParameterError(f"duplicate edge {edge!r}")
            seen.add(edge)
            labels.append(edge)
        self.key_labels = tuple(sorted(labels))

    def initial_state(self):
        roots = {v: v for v in self.vertices}
        return frozenset(range(len(self.key_labels))), (roots, len(self.vertices))

    def stop(self, K, R):
        return R[1] <= 1

    def split(self, K, R):
        if not K:
            raise InfeasibleGraphError(
                f"graph is disconnected: {R[1]} components remain and no edge joins them"
            )
        return [tuple(sorted(K))]

    def map(self, K, R, winners):
        roots, count = R
        u, v = self.key_labels[winners[0]]
        ru, rv = roots[u], roots[v]
        merged = min(ru, rv)
        new_roots = {x: merged if r in (ru, rv) else r for x, r in roots.items()}
        keep = frozenset(
            k for k in K
            if new_roots[self.key_labels[k][0]] != new_roots[self.key_labels[k][1]]
        )
        return keep, (new_roots, count - 1)

    def combine(self, child, K, R, winners):
        return (child or frozenset()) | {self.key_labels[winners[0]]}

    def finish(self, value):
        return value if value is not None else frozenset()

    def encode_value(self, value):
        return tuple(sorted(value))

    def validate_value(self, value):
        return validate(value, "spanning_tree", vertices=self.vertices)


class Arborescence(StructureDefinition):
    """A directed spanning tree with all edges oriented away from a root.

    Every non-root super-node competes over its incoming edges at once.
    If the winners are cycle-free they are the answer; otherwise the first
    cycle (in canonical vertex order) is contracted into one super-node,
    its internal edges drop out, and the recursion resolves the smaller
    graph.  Winners that survive a contraction keep their utility at
    exactly 0, so they win again deterministically until the recursion
    unwinds; expanding a cycle keeps all its edges but the one displaced
    by the edge entering from outside.
    """

    def __init__(self, vertices: Iterable, edges: Iterable, root):
        self.vertices = tuple(sorted(set(vertices)))
        if root not in self.vertices:
            raise InvalidParameterError(f"root {root!r} is not a vertex")
        self.root = root
        seen = set()
        labels = []
        for u, v in edges:
            if u not in self.vertices or v not in self.vertices:
                raise InvalidParameterError(f"edge ({u!r}, {v!r}) has unknown endpoint")
            if (u, v) in seen:
                raise InvalidParameterError(f"duplicate edge ({u!r}, {v!r})")
            seen.add((u, v))
            if v == root or u == v:
                continue  # can never join an arborescence
            labels.append((u, v))
        self.key_labels = tuple(sorted(labels))
        heads = {v for _, v in self.key_labels}
        for v in self.vertices:
            if v != root and v not in heads:
                raise InfeasibleGraphError(f"vertex {v!r} has no incoming edges")

    def initial_state(self):
        supernodes = tuple(frozenset((v,)) for v in self.vertices)
        return frozenset(range(len(self.key_labels))), supernodes

    def stop(self, K, R):
        return not K or len(R) == 1

    def _nonroot(self, R):
        return [S for S in R if self.root not in S]

    def split(self, K, R):
        vertex_slot = {}
        targets = self._nonroot(R)
        for i, S in enumerate(targets):
            for v in S:
                vertex_slot[v] = i
        buckets = [[] for _ in targets]
        for k in sorted(K):
            buckets[vertex_slot[self.key_labels[k][1]]].append(k)
        parts = [tuple(b) for b in buckets]
        for S, P in zip(targets, parts):
            if not P:
                raise InfeasibleGraphError(
                    f"no surviving edge enters the vertex group {sorted(S)!r}"
                )
        return parts

    def _find_cycle(self, R, winners) -> Optional[list]:
        """First winner-pointer cycle in canonical super-node order.

        Pointers go from each non-root super-node to the super-node holding
        its winning edge's tail; the root has no pointer, so any cycle
        avoids it.  Returns the cycle as a list of indices into R.
        """
        targets = self._nonroot(R)
        slot_of = {S: i for i, S in enumerate(R)}
        vertex_slot = {}
        for i, S in enumerate(R):
            for v in S:
                vertex_slot[v] = i
        pointer = {}
        for S, w in zip(targets, winners):
            tail = self.key_labels[w][0]
            pointer[slot_of[S]] = vertex_slot[tail]
        state = {}
        for start in sorted(pointer):
            if state.get(start) == "done":
                continue
            path = []
            node = start
            while node in pointer and state.get(node) is None:
                state[node] = "active"
                path.append(node)
                node = pointer[node]
            if state.get(node) == "active":
                return path[path.index(node):]
            for n in path:
                state[n] = "done"
        return None

    def map(self, K, R, winners):
        cycle = self._find_cycle(R, winners)
        if cycle is None:
            return frozenset(), R
        loop_vertices = frozenset().union(*(R[i] for i in cycle))
        keep = frozenset(
            k for k in K
            if not (self.key_labels[k][0] in loop_vertices
                    and self.key_labels[k][1] in loop_vertices)
        )
        merged = [S for i, S in enumerate(R) if i not in set(cycle)]
        merged.append(loop_vertices)
        merged.sort(key=min)
        return keep, tuple(merged)

    def combine(self, child, K, R, winners):
        cycle = self._find_cycle(R, winners)
        if cycle is None:
            return frozenset(self.key_labels[w] for w in winners)
        winner_of_slot = {}
        ti = 0
        for i, S in enumerate(R):
            if self.root not in S:
                winner_of_slot[i] = self.key_labels[winners[ti]]
                ti += 1
        child = child or frozenset()
        loop_vertices = frozenset().union(*(R[i] for i in cycle))
        entering = [e for e in child if e[1] in loop_vertices]
        if len(entering) != 1:
            raise InfeasibleGraphError(
                "contracted cycle is not entered by exactly one edge"
            )
        displaced_slot = next(i for i in cycle if entering[0][1] in R[i])
        kept = {winner_of_slot[i] for i in cycle if i != displaced_slot}
        return child | kept

    def finish(self, value):
        return value if value is not None else frozenset()

    def encode_value(self, value):
        return tuple(sorted(value))

    def validate_value(self, value):
        return validate(
            value, "arborescence", vertices=self.vertices, root=self.root
        )


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def _fail(reason: str) -> ValidationResult:
    return ValidationResult(False, reason)


_OK = ValidationResult(True)


def _tree_nodes_inorder(tree) -> list:
    out = []
    stack = [(tree, False)]
    while stack:
        node, expanded = stack.pop()
        if node is None:
            continue
        if expanded:
            out.append(node.key)
        else:
            stack.append((node.right, False))
            stack.append((node, True))
            stack.append((node.left, False))
    return out


def validate(value, kind: str, **params) -> ValidationResult:
    """Check a structure value against its kind's invariants.

    Returns the first violated invariant as a diagnostic.  Required
    params: subset(keys, k), permutation(keys), matching(n),
    binary_tree(n), spanning_tree(vertices), arborescence(vertices, root).
    """
    if kind == "subset":
        keys, k = set(params["keys"]), params["k"]
        if len(value) != k:
            return _fail(f"subset has {len(value)} elements, expected {k}")
        if not set(value) <= keys:
            return _fail(f"subset contains unknown keys {set(value) - keys!r}")
        return _OK
    if kind == "permutation":
        keys = tuple(params["keys"])
        if len(value) != len(keys):
            return _fail(f"permutation has {len(value)} entries, expected {len(keys)}")
        if sorted(value) != sorted(keys):
            return _fail("permutation is not a bijection on the keys")
        return _OK
    if kind == "matching":
        n = params["n"]
        rows = [r for r, _ in value]
        cols = [c for _, c in value]
        if sorted(rows) != list(range(n)):
            return _fail("rows are not each used exactly once")
        if sorted(cols) != list(range(n)):
            return _fail("columns are not each used exactly once")
        return _OK
    if kind == "binary_tree":
        n = params["n"]
        if value is None:
            return _fail("tree is empty")
        inorder = _tree_nodes_inorder(value)
        if len(inorder) != n or len(set(inorder)) != n:
            return _fail(f"tree holds {len(inorder)} nodes, expected {n} distinct")
        if inorder != sorted(inorder) or inorder != list(range(n)):
            return _fail("in-order traversal does not recover the token order")
        return _OK
    if kind == "spanning_tree":
        vertices = tuple(params["vertices"])
        if len(value) != len(vertices) - 1:
            return _fail(f"{len(value)} edges for {len(vertices)} vertices")
        roots = {v: v for v in vertices}

        def find(x):
            while roots[x] != x:
                roots[x] = roots[roots[x]]
                x = roots[x]
            return x

        for u, v in value:
            ru, rv = find(u), find(v)
            if ru == rv:
                return _fail(f"edge ({u!r}, {v!r}) closes a cycle")
            roots[ru] = rv
        if len({find(v) for v in vertices}) != 1:
            return _fail("edges do not span all vertices")
        return _OK
    if kind == "arborescence":
        vertices, root = tuple(params["vertices"]), params["root"]
        indeg = {v: 0 for v in vertices}
        for _u, v in value:
            indeg[v] += 1
        if indeg[root] != 0:
            return _fail(f"root {root!r} has in-degree {indeg[root]}")
        for v in vertices:
            if v != root and indeg[v] != 1:
                return _fail(f"vertex {v!r} has in-degree {indeg[v]}, expected 1")
        children = {}
        for u, v in value:
            children.setdefault(u, []).append(v)
        reached = {root}
        frontier = [root]
        while frontier:
            u = frontier.pop()
            for v in children.get(u, ()):
                if v not in reached:
                    reached.add(v)
                    frontier.append(v)
        if reached != set(vertices):
            return _fail(f"vertices {set(vertices) - reached!r} unreachable from the root")
        return _OK
    raise InvalidArgumentError(f"unknown structure kind {kind!r}")


def _tree_links(tree) -> frozenset:
    links = set()
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.left is not None:
            links.add((node.key, node.left.key, "L"))
            stack.append(node.left)
        if node.right is not None:
            links.add((node.key, node.right.key, "R"))
            stack.append(node.right)
    return frozenset(links)


def hamming_distance(a, b) -> int:
    """Number of differing components between two structure values.

    Set-valued structures compare by symmetric difference, permutations
    position by position, binary trees by their (parent, child, side)
    link sets.
    """
    if isinstance(a, TreeNode) and isinstance(b, TreeNode):
        return len(_tree_links(a) ^ _tree_links(b))
    if isinstance(a, frozenset) or isinstance(a, set):
        return len(frozenset(a) ^ frozenset(b))
    if isinstance(a, tuple) and isinstance(b, tuple):
        if len(a) != len(b):
            raise InvalidArgumentError("sequences of different length")
        return sum(x != y for x, y in zip(a, b))
    raise InvalidArgumentError(
        f"cannot compare values of types {type(a).__name__} and {type(b).__name__}"
    )
