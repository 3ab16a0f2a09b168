from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class ParseTree:
    """Dependency tree over n tokens. ``heads`` are 1-based, 0 marks the root."""
    heads: list
    depths: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    spans: list = field(repr=False)

    def __len__(self):
        return len(self.heads)

    @property
    def root(self):
        return self.heads.index(0)

    def is_constituent(self, start, end):
        return (start, end) in self.spans


def validate_heads(heads):
    n = len(heads)
    if n == 0:
        raise ContractError("empty tree")
    roots = [i for i, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        raise ContractError(f"tree must have exactly one root, found {len(roots)}")
    for i, h in enumerate(heads):
        if not 0 <= h <= n:
            raise ContractError(f"head {h} of token {i + 1} out of range 0..{n}")
        if h == i + 1:
            raise ContractError(f"token {i + 1} is its own head")
    for i in range(n):
        seen = set()
        j = i
        while heads[j] != 0:
            if j in seen:
                raise ContractError(f"cycle through token {i + 1}")
            seen.add(j)
            j = heads[j] - 1


def tree_metrics(heads):
    """Depths, pairwise path lengths (BFS) and subtree spans for a head array."""
    heads = [int(h) for h in heads]
    validate_heads(heads)
    n = len(heads)
    adj = [[] for _ in range(n)]
    children = [[] for _ in range(n)]
    for i, h in enumerate(heads):
        if h:
            adj[i].append(h - 1)
            adj[h - 1].append(i)
            children[h - 1].append(i)

    dist = np.zeros((n, n))
    for s in range(n):
        seen = [-1] * n
        seen[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if seen[v] < 0:
                    seen[v] = seen[u] + 1
                    q.append(v)
        dist[s] = seen
    root = heads.index(0)
    depths = dist[root].copy()

    spans = []

    def extent(i):
        lo = hi = i
        size = 1
        for c in children[i]:
            clo, chi, csize = extent(c)
            lo, hi, size = min(lo, clo), max(hi, chi), size + csize
        if hi - lo + 1 == size:
            spans.append((lo, hi))
        return lo, hi, size

    extent(root)
    return ParseTree(heads, depths, dist, sorted(set(spans)))
