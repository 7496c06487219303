"""Overlay topology construction and gossip parameter mixing.

Two families of subgraphs drive the exchange:

  modality subgraphs   one per modality m, over every agent owning m;
  signature subgraphs  one per distinct modality set, over the agents
                       whose sets are identical (used for synergistic
                       heads and for clique-style baseline sharing).

Members are ordered by agent id; ring edges connect cyclic neighbors in
that order, the chordal ring adds the diametrically opposite link, and
random gossip resamples two peers per member each round (groups smaller
than 3 fall back to ring semantics). Mixing matrices are uniform
1/(deg+1) on regular graphs and Metropolis weights otherwise; both are
row- and column-stochastic.
"""

from dataclasses import dataclass

import numpy as np

from . import seeds
from .errors import ConfigurationError

RING = "ring"
CHORDAL_RING = "chordal_ring"
RANDOM_GOSSIP = "random_gossip"
TOPOLOGIES = (RING, CHORDAL_RING, RANDOM_GOSSIP)

GOSSIP_PEERS = 2
ROW_SUM_TOL = 1e-12


@dataclass
class Subgraph:
    """A communication group plus its (static) mixing matrix.

    ``kind`` is "modality" or "signature"; ``key`` the modality id or the
    signature tuple; ``graph_index`` a stable integer used to key gossip
    streams. ``edges`` holds member-index pairs (i < j); for random
    gossip it is resampled per round and ``mixing`` stays None.
    """

    kind: str
    key: object
    graph_index: int
    members: tuple
    topology: str
    edges: frozenset = None
    mixing: np.ndarray = None

    @property
    def size(self):
        return len(self.members)


def ring_edges(n):
    if n < 2:
        return frozenset()
    if n == 2:
        return frozenset({(0, 1)})
    return frozenset((i, (i + 1) % n) if i < (i + 1) % n else ((i + 1) % n, i)
                     for i in range(n))


def chordal_ring_edges(n):
    """Ring plus each node's diametrically opposite chord."""
    edges = set(ring_edges(n))
    for i in range(n):
        j = (i + n // 2) % n
        if i != j:
            edges.add((min(i, j), max(i, j)))
    return frozenset(edges)


def _degrees(n, edges):
    deg = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    return deg


def _is_connected(n, edges):
    if n <= 1:
        return True
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def build_mixing_matrix(n, edges, require_connected=True):
    """Row-stochastic W respecting the edge sparsity.

    Regular graphs get uniform weights 1/(deg+1) over self plus
    neighbors; irregular graphs get Metropolis weights
    W_ik = 1/(1 + max(deg_i, deg_k)) with the diagonal absorbing the
    remainder. Both constructions are symmetric, hence also
    column-stochastic.
    """
    if n == 1:
        return np.ones((1, 1))
    if require_connected and not _is_connected(n, edges):
        raise ConfigurationError("subgraph is disconnected")
    deg = _degrees(n, edges)
    w = np.zeros((n, n))
    if deg.min() == deg.max():
        weight = 1.0 / (deg[0] + 1)
        for i, j in edges:
            w[i, j] = weight
            w[j, i] = weight
        np.fill_diagonal(w, weight)
    else:
        for i, j in edges:
            weight = 1.0 / (1 + max(deg[i], deg[j]))
            w[i, j] = weight
            w[j, i] = weight
        np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    if np.abs(w.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
        raise ConfigurationError("mixing matrix rows do not sum to 1")
    return w


def build_subgraphs(agents, topology, seed):
    """(modality subgraphs, signature subgraphs) for an agent population.

    Static topologies get their edges and mixing matrix here; random
    gossip defers edges to resample_gossip. graph_index is the modality
    id for modality subgraphs and n_modalities + rank for signature
    subgraphs, giving every group a stable gossip stream.
    """
    if topology not in TOPOLOGIES:
        raise ConfigurationError(f"unknown topology {topology!r}")
    all_modalities = sorted({m for a in agents for m in a.modalities})
    n_modalities = (all_modalities[-1] + 1) if all_modalities else 0

    def make(kind, key, graph_index, members):
        sub = Subgraph(kind, key, graph_index, tuple(members), topology)
        n = sub.size
        if topology == RANDOM_GOSSIP and n >= 3:
            return sub
        edges = chordal_ring_edges(n) if topology == CHORDAL_RING else ring_edges(n)
        sub.edges = edges
        sub.mixing = build_mixing_matrix(n, edges)
        return sub

    modality_graphs = []
    for m in all_modalities:
        members = sorted(a.agent_id for a in agents if m in a.modalities)
        modality_graphs.append(make("modality", m, m, members))

    signature_graphs = []
    signatures = sorted({a.modalities for a in agents})
    for rank, sig in enumerate(signatures):
        members = sorted(a.agent_id for a in agents if a.modalities == sig)
        signature_graphs.append(make("signature", sig, n_modalities + rank, members))
    return modality_graphs, signature_graphs


def resample_gossip(subgraph, round_index, seed):
    """Per-round gossip edges: each member draws GOSSIP_PEERS distinct
    peers; the edge set is the symmetrized union, so degrees can exceed
    GOSSIP_PEERS. Groups below size 3 use ring semantics."""
    if subgraph.topology != RANDOM_GOSSIP:
        raise ConfigurationError("resample_gossip needs a random-gossip subgraph")
    n = subgraph.size
    if n < 3:
        return ring_edges(n)
    rng = seeds.stream(seed, seeds.GOSSIP, round_index, subgraph.graph_index)
    edges = set()
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for j in rng.choice(len(others), size=GOSSIP_PEERS, replace=False):
            peer = others[j]
            edges.add((min(i, peer), max(i, peer)))
    return frozenset(edges)


def round_mixing(subgraph, round_index, seed):
    """The mixing matrix to use this round (resampled for gossip)."""
    if subgraph.mixing is not None:
        return subgraph.mixing
    edges = resample_gossip(subgraph, round_index, seed)
    return build_mixing_matrix(subgraph.size, edges, require_connected=False)


def mix_parameters(w, member_params, member_grads=None, eta=0.0):
    """One synchronous mixing step: new_i = sum_k W_ik (theta_k - eta*grad_k).

    ``member_params`` is a list (one per member, ordered as the mixing
    matrix rows) of block-name -> array dicts, all structurally equal.
    Returns new per-member dicts without touching the inputs.
    """
    n = len(member_params)
    if w.shape != (n, n):
        raise ConfigurationError(f"mixing matrix {w.shape} does not match {n} members")
    keys = list(member_params[0])
    for p in member_params[1:]:
        if list(p) != keys:
            raise ConfigurationError("member parameter blocks are not aligned")
    updated = []
    for k, params in enumerate(member_params):
        if member_grads is None or eta == 0.0:
            updated.append(params)
        else:
            g = member_grads[k]
            updated.append({name: params[name] - eta * g[name] for name in keys})
    out = [dict() for _ in range(n)]
    for name in keys:
        shape = updated[0][name].shape
        for p in updated[1:]:
            if p[name].shape != shape:
                raise ConfigurationError(f"block {name} shapes differ across members")
        stacked = np.stack([p[name] for p in updated])
        mixed = np.tensordot(w, stacked, axes=(1, 0))
        for i in range(n):
            out[i][name] = mixed[i]
    return out
