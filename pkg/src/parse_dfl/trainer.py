"""Experiment orchestration: local epochs, gossip rounds, evaluation.

A round is one local epoch of minibatch SGD per agent followed by a
synchronous mixing barrier. Mixing averages *post-epoch* parameters:
with one full-batch step per epoch this coincides exactly with
sum_k W_ik (theta_k - eta * grad_k), and serves as the standard
local-SGD realization otherwise.

Sharing rules per strategy:

  parse           per-modality subgraphs mix {encoder_m, unique head m,
                  redundant head}; the redundant head belongs to every
                  owned modality's bundle, and per-modality mixes apply
                  sequentially in ascending modality order, each reading
                  the previous result. Synergistic heads (plus learned
                  fusion parameters) mix on same-signature subgraphs.
  dsgd_modality   per-modality subgraphs mix {encoder_m, classifier_m}.
  dsgd_hybrid     per-modality subgraphs mix {encoder_m} only.
  dsgd_task       same-signature cliques mix every parameter block.

Determinism: all RNG is keyed per (seed, domain, agent, round); agents'
local epochs touch only their own parameters, so results are identical
for any worker-pool size.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import network, objectives, seeds, synthdata
from .errors import ConfigurationError, TrainingDivergedError

DEFAULT_EVAL_INTERVAL = 10


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; one seed reproduces all of it."""

    dataset: str = "synthetic"          # "synthetic" or a dataset CSV path
    n_modalities: int = 2
    n_classes: int = 4
    dim_per_modality: int = 12
    strength_redundant: float = 0.3
    strength_unique: float = 0.3
    strength_synergy: float = 1.0
    noise_std: float = 0.5
    n_samples: int = 12000
    agent_mix: tuple = (10, 10, 10)     # unimodal counts per modality [+ full-set count]
    strategy: str = mdl.PARSE
    topology: str = network.RING
    rounds: int = 200
    eta: float = 0.05
    batch_size: int = 32
    beta: float = 0.2
    tau: float = 0.2
    split_dims: tuple = (16, 16, 16)
    fusion: str = mdl.FUSION_MEAN
    alpha: float = 0.5
    seed: int = 0
    hidden_dim: int = 64
    eval_interval: int = DEFAULT_EVAL_INTERVAL
    grad_cosine_interval: int = 0       # 0 disables the diagnostic
    nce_include_positive_in_denominator: bool = False

    def __post_init__(self):
        if self.strategy not in mdl.STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.topology not in network.TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.topology!r}")
        if self.fusion not in mdl.FUSION_OPERATORS:
            raise ConfigurationError(f"unknown fusion operator {self.fusion!r}")
        if len(self.agent_mix) not in (self.n_modalities, self.n_modalities + 1):
            raise ConfigurationError(
                "agent_mix needs one count per modality, optionally plus a full-set count")
        if any(c < 0 for c in self.agent_mix) or sum(self.agent_mix) < 2:
            raise ConfigurationError("agent counts must be >= 0 with total >= 2")
        if self.rounds < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ConfigurationError("rounds, batch_size, hidden_dim must be >= 1")
        # eta = 0 is allowed: it turns a round into pure gossip averaging
        if self.eta < 0 or self.beta < 0 or self.tau <= 0 or self.alpha <= 0:
            raise ConfigurationError("need eta >= 0, beta >= 0, tau > 0, alpha > 0")
        if len(self.split_dims) != 3 or any(d < 1 for d in self.split_dims):
            raise ConfigurationError("split_dims must be three positive widths")
        if self.eval_interval < 1 or self.grad_cosine_interval < 0:
            raise ConfigurationError("eval_interval must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")

    def signatures(self):
        """Modality-set per agent-mix entry, in agent-id order."""
        sigs = [(m,) for m in range(self.n_modalities)]
        if len(self.agent_mix) == self.n_modalities + 1:
            sigs.append(tuple(range(self.n_modalities)))
        return sigs

    def synthetic_spec(self):
        return synthdata.SyntheticSpec(
            self.n_modalities, self.n_classes, self.dim_per_modality,
            self.strength_redundant, self.strength_unique, self.strength_synergy,
            self.noise_std, self.n_samples)


@dataclass
class RoundMetrics:
    round_index: int
    group_loss: dict                    # signature -> LossBreakdown
    group_accuracy: dict = None         # signature -> mean accuracy (eval rounds)
    consensus: dict = None              # subgraph label -> max member-to-mean distance
    grad_alignment: tuple = None        # (intra_mean, inter_mean)


@dataclass
class ExperimentState:
    config: RunConfig
    dataset: synthdata.Dataset
    partition: synthdata.PartitionAssignment
    agents: list
    modality_graphs: list
    signature_graphs: list


@dataclass
class GradAlignment:
    pair_sims: dict                     # (graph key, agent i, agent k) -> cosine
    intra_mean: float
    inter_mean: float


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------

def setup_experiment(config):
    if config.dataset == "synthetic":
        dataset = synthdata.generate_dataset(config.synthetic_spec(), config.seed)
    else:
        dataset = synthdata.load_dataset(config.dataset)
    if dataset.n_modalities != config.n_modalities:
        raise ConfigurationError(
            f"dataset has {dataset.n_modalities} modalities, config says {config.n_modalities}")

    n_agents = sum(config.agent_mix)
    partition = synthdata.dirichlet_partition(
        dataset, n_agents, config.alpha, config.seed, min_shard=2 * config.batch_size)

    input_dims = {m: dataset.features[m].shape[1] for m in range(dataset.n_modalities)}
    agents = []
    agent_id = 0
    for sig, count in zip(config.signatures(), config.agent_mix):
        for _ in range(count):
            rng = seeds.stream(config.seed, seeds.INIT, agent_id)
            agent = mdl.init_agent(agent_id, sig, config.strategy, input_dims,
                                   config.hidden_dim, config.split_dims,
                                   dataset.n_classes, config.fusion, rng)
            agent.train_idx = partition.train_shards[agent_id]
            agent.test_idx = partition.test_shards[agent_id]
            agents.append(agent)
            agent_id += 1

    modality_graphs, signature_graphs = network.build_subgraphs(
        agents, config.topology, config.seed)
    return ExperimentState(config, dataset, partition, agents,
                           modality_graphs, signature_graphs)


# ---------------------------------------------------------------------------
# sharing bundles
# ---------------------------------------------------------------------------

def modality_bundle_keys(agent, m):
    """Block names exchanged on modality m's subgraph for this agent."""
    enc = [f"enc.{m}.w1", f"enc.{m}.b1", f"enc.{m}.w2", f"enc.{m}.b2"]
    if agent.strategy == mdl.PARSE:
        return enc + [f"uhead.{m}.w", f"uhead.{m}.b", "rhead.w", "rhead.b"]
    if agent.strategy == mdl.DSGD_MODALITY:
        return enc + [f"clf.{m}.w", f"clf.{m}.b"]
    if agent.strategy == mdl.DSGD_HYBRID:
        return enc
    raise ConfigurationError("dsgd_task shares on signature subgraphs only")


def signature_bundle_keys(agent):
    """Block names exchanged on the agent's same-signature subgraph."""
    if agent.strategy == mdl.DSGD_TASK:
        return list(agent.param_blocks())
    if agent.strategy == mdl.PARSE and agent.heads.synergistic is not None:
        keys = ["shead.w", "shead.b"]
        if agent.heads.fusion is not None:
            keys += ["fusion.w", "fusion.b"]
        return keys
    return []


# ---------------------------------------------------------------------------
# one round
# ---------------------------------------------------------------------------

def _frozen_slice_view(agent):
    """The synergistic-slice rows of a unimodal fission agent's output layer."""
    m = agent.modalities[0]
    enc = agent.encoders[m]
    d_r, d_s, _ = enc.split_dims
    return enc.w2[d_r:d_r + d_s].copy(), enc.b2[d_r:d_r + d_s].copy()


def local_epoch(agent, dataset, config, round_index):
    """One seeded-shuffled pass over the agent's train shard; returns the
    epoch-mean LossBreakdown. Aborts on a non-finite loss."""
    rng = seeds.stream(config.seed, seeds.SHUFFLE, agent.agent_id, round_index)
    order = rng.permutation(agent.train_idx)
    blocks = agent.param_blocks()

    freeze_check = (agent.strategy == mdl.PARSE and not agent.is_multimodal)
    if freeze_check:
        w_before, b_before = _frozen_slice_view(agent)

    weight = 0.0
    sums = np.zeros(3)
    per_modality = {m: 0.0 for m in agent.modalities}
    for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
        idx = order[start:start + config.batch_size]
        batch = dataset.batch(idx, agent.modalities)
        breakdown, grads = objectives.local_loss(agent, batch, config)
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(
                f"non-finite loss at agent {agent.agent_id}, "
                f"round {round_index}, batch {batch_index}")
        for name, g in grads.items():
            blocks[name] -= config.eta * g
        n = len(idx)
        weight += n
        sums += n * np.array([breakdown.total, breakdown.cls, breakdown.nce])
        for m, v in breakdown.per_modality_cls.items():
            per_modality[m] += n * v

    if freeze_check:
        w_after, b_after = _frozen_slice_view(agent)
        if not (np.array_equal(w_before, w_after) and np.array_equal(b_before, b_after)):
            raise RuntimeError(
                f"synergistic slice of unimodal agent {agent.agent_id} "
                "moved during local training")

    total, cls, nce = sums / weight
    return objectives.LossBreakdown(
        total, cls, nce, {m: v / weight for m, v in per_modality.items()})


def local_stage(state, round_index, threads=1):
    """Run every agent's local epoch; returns agent_id -> LossBreakdown."""
    agents, cfg, data = state.agents, state.config, state.dataset
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(local_epoch, a, data, cfg, round_index) for a in agents]
            results = [f.result() for f in futures]
    else:
        results = [local_epoch(a, data, cfg, round_index) for a in agents]
    return {a.agent_id: r for a, r in zip(agents, results)}


def _mix_graph(state, graph, keys_by_agent, round_index):
    if graph.size < 2:
        return
    w = network.round_mixing(graph, round_index, state.config.seed)
    members = [state.agents[i] for i in graph.members]
    bundles = []
    for agent in members:
        blocks = agent.param_blocks()
        bundles.append({k: blocks[k] for k in keys_by_agent(agent)})
    mixed = network.mix_parameters(w, bundles)
    for agent, new in zip(members, mixed):
        for name, value in new.items():
            agent.set_param_block(name, value)


def mix_stage(state, round_index):
    """The synchronous exchange barrier for one round."""
    strategy = state.config.strategy
    if strategy == mdl.DSGD_TASK:
        for graph in state.signature_graphs:
            _mix_graph(state, graph, signature_bundle_keys, round_index)
        return
    for graph in state.modality_graphs:   # ascending modality id
        _mix_graph(state, graph,
                   lambda a, m=graph.key: modality_bundle_keys(a, m), round_index)
    if strategy == mdl.PARSE:
        for graph in state.signature_graphs:
            if len(graph.key) >= 2:
                _mix_graph(state, graph, signature_bundle_keys, round_index)


def evaluate(state):
    """(per-agent accuracy, per-signature-group mean accuracy) on each
    agent's own held-out shard. Agents with empty test shards are
    excluded with a warning."""
    per_agent, groups = {}, {}
    for agent in state.agents:
        if len(agent.test_idx) == 0:
            warnings.warn(f"agent {agent.agent_id} has an empty test shard; excluded")
            continue
        feats, labels = state.dataset.batch(agent.test_idx, agent.modalities)
        logits = mdl.predict_batch(agent, feats, state.config.fusion)
        acc = float(np.mean(np.argmax(logits, axis=1) == labels))
        per_agent[agent.agent_id] = acc
        groups.setdefault(agent.signature, []).append(acc)
    return per_agent, {sig: float(np.mean(v)) for sig, v in groups.items()}


def _graph_label(graph):
    if graph.kind == "modality":
        return f"modality:m{graph.key}"
    return "signature:" + "+".join(f"m{m}" for m in graph.key)


def _active_graphs(state):
    strategy = state.config.strategy
    if strategy == mdl.DSGD_TASK:
        return list(state.signature_graphs)
    graphs = list(state.modality_graphs)
    if strategy == mdl.PARSE:
        graphs += [g for g in state.signature_graphs if len(g.key) >= 2]
    return graphs


def consensus_distance(bundles):
    """Max L2 distance from any member's flattened bundle to the mean."""
    if len(bundles) < 2:
        raise ConfigurationError("consensus distance needs >= 2 members")
    keys = list(bundles[0])
    flats = np.stack([np.concatenate([b[k].ravel() for k in keys]) for b in bundles])
    mean = flats.mean(axis=0)
    return float(np.linalg.norm(flats - mean, axis=1).max())


def _graph_bundles(state, graph):
    out = []
    for i in graph.members:
        agent = state.agents[i]
        if graph.kind == "modality":
            keys = modality_bundle_keys(agent, graph.key)
        else:
            keys = signature_bundle_keys(agent)
        blocks = agent.param_blocks()
        out.append({k: blocks[k] for k in keys})
    return out


def consensus_metrics(state):
    out = {}
    for graph in _active_graphs(state):
        if graph.size >= 2:
            out[_graph_label(graph)] = consensus_distance(_graph_bundles(state, graph))
    return out


def grad_cosine_similarity(state, probe_size=None):
    """Pairwise cosine similarity of local-objective gradients restricted
    to the modality bundle each pair exchanges, one probe batch per agent
    (its own train shard, optionally truncated to probe_size). Pairs are
    grouped intra vs inter signature; zero-gradient members are excluded
    with a warning."""
    cfg = state.config
    flat_grads = {}
    for agent in state.agents:
        idx = agent.train_idx if probe_size is None else agent.train_idx[:probe_size]
        batch = state.dataset.batch(idx, agent.modalities)
        _, grads = objectives.local_loss(agent, batch, cfg)
        flat_grads[agent.agent_id] = grads

    def bundle_grad(agent, m):
        blocks = agent.param_blocks()
        if agent.strategy == mdl.DSGD_TASK:
            keys = [f"enc.{m}.{p}" for p in ("w1", "b1", "w2", "b2")]
        else:
            keys = modality_bundle_keys(agent, m)
        g = flat_grads[agent.agent_id]
        return np.concatenate([np.ravel(g.get(k, np.zeros_like(blocks[k]))) for k in keys])

    pair_sims, intra, inter = {}, [], []
    for graph in state.modality_graphs:
        m = graph.key
        vecs, ok = {}, []
        for i in graph.members:
            v = bundle_grad(state.agents[i], m)
            norm = np.linalg.norm(v)
            if norm < 1e-15:
                warnings.warn(f"agent {i} has zero gradient on modality {m}; pair excluded")
                continue
            vecs[i] = v / norm
            ok.append(i)
        for a_pos, i in enumerate(ok):
            for k in ok[a_pos + 1:]:
                sim = float(vecs[i] @ vecs[k])
                pair_sims[(m, i, k)] = sim
                same = state.agents[i].modalities == state.agents[k].modalities
                (intra if same else inter).append(sim)
    return GradAlignment(
        pair_sims,
        float(np.mean(intra)) if intra else float("nan"),
        float(np.mean(inter)) if inter else float("nan"))


def run_round(state, round_index, threads=1):
    """Local epochs, then mixing, then any scheduled diagnostics."""
    cfg = state.config
    losses = local_stage(state, round_index, threads)
    mix_stage(state, round_index)

    group_loss = {}
    for agent in state.agents:
        group_loss.setdefault(agent.signature, []).append(losses[agent.agent_id])
    group_loss = {
        sig: objectives.LossBreakdown(
            float(np.mean([b.total for b in v])),
            float(np.mean([b.cls for b in v])),
            float(np.mean([b.nce for b in v])),
            {})
        for sig, v in group_loss.items()}

    metrics = RoundMetrics(round_index, group_loss)
    is_eval = (round_index % cfg.eval_interval == 0) or (round_index == cfg.rounds)
    if is_eval:
        _, metrics.group_accuracy = evaluate(state)
        metrics.consensus = consensus_metrics(state)
    if cfg.grad_cosine_interval and round_index % cfg.grad_cosine_interval == 0:
        align = grad_cosine_similarity(state)
        metrics.grad_alignment = (align.intra_mean, align.inter_mean)
    return metrics


def run_experiment(config, threads=1):
    """Set up and run all rounds; returns (metrics list, final state)."""
    state = setup_experiment(config)
    history = [run_round(state, r, threads) for r in range(1, config.rounds + 1)]
    return history, state


# ---------------------------------------------------------------------------
# metrics and checkpoint files
# ---------------------------------------------------------------------------

def metrics_rows(history):
    """Flatten RoundMetrics into (round, group, metric, value) tuples."""
    rows = []
    for m in history:
        for sig in sorted(m.group_loss):
            b = m.group_loss[sig]
            rows.append((m.round_index, sig, "loss_total", b.total))
            rows.append((m.round_index, sig, "loss_cls", b.cls))
            rows.append((m.round_index, sig, "loss_nce", b.nce))
        if m.group_accuracy is not None:
            for sig in sorted(m.group_accuracy):
                rows.append((m.round_index, sig, "accuracy", m.group_accuracy[sig]))
        if m.consensus is not None:
            for label in sorted(m.consensus):
                rows.append((m.round_index, label, "consensus", m.consensus[label]))
        if m.grad_alignment is not None:
            rows.append((m.round_index, "all", "grad_cos_intra", m.grad_alignment[0]))
            rows.append((m.round_index, "all", "grad_cos_inter", m.grad_alignment[1]))
    return rows


def write_metrics_csv(path, history):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round,group,metric,value\n")
        for r, group, metric, value in metrics_rows(history):
            fh.write(f"{r},{group},{metric},{format(value, '.17g')}\n")


def save_checkpoint(path, agents):
    """Text checkpoint: one 'agent_id/block shape..' header per block,
    then the block's rows as 17-significant-digit decimals."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for agent in agents:
            for name, arr in agent.param_blocks().items():
                dims = " ".join(str(d) for d in arr.shape)
                fh.write(f"{agent.agent_id}/{name} {dims}\n")
                rows = arr[None, :] if arr.ndim == 1 else arr
                for row in rows:
                    fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def load_checkpoint(path):
    """agent_id -> {block name -> array}; inverse of save_checkpoint."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0
    while pos < len(lines):
        header = lines[pos].split()
        agent_s, name = header[0].split("/", 1)
        shape = tuple(int(d) for d in header[1:])
        n_rows = shape[0] if len(shape) == 2 else 1
        data = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(n_rows)]
        arr = np.asarray(data, dtype=np.float64).reshape(shape)
        out.setdefault(int(agent_s), {})[name] = arr
        pos += 1 + n_rows
    return out
