"""Agent models.

The fission model gives each owned modality a two-layer encoder whose
output is split, in fixed column order, into redundant / synergistic /
unique slices. Redundant and unique slices feed linear heads (the
redundant head is one per agent, shared across its modalities); agents
owning two or more modalities additionally fuse the synergistic slices
and classify the result with a synergistic head. Inference sums the
ensemble: f_s(fused) + sum_m [f_u(z_u) + f_r(z_r)].

Baseline strategies use the same two-layer encoder but keep the latent
undivided and classify with plain linear layers:

  dsgd_modality  one classifier per modality; multimodal prediction is
                 the average of the per-modality logits (no fusion head);
  dsgd_task      multimodal agents classify the mean of their latents;
  dsgd_hybrid    same model as dsgd_task, different sharing rules.

Parameter tensors are addressed by canonical block names ("enc.0.w1",
"uhead.0.w", "rhead.b", "shead.w", "fusion.w", "clf.0.w", "clf.w", ..)
used uniformly by gradients, gossip exchange, and checkpoints.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import ConfigurationError

PARSE = "parse"
DSGD_MODALITY = "dsgd_modality"
DSGD_TASK = "dsgd_task"
DSGD_HYBRID = "dsgd_hybrid"
STRATEGIES = (PARSE, DSGD_MODALITY, DSGD_TASK, DSGD_HYBRID)

FUSION_MEAN = "mean"
FUSION_CONCAT_LINEAR = "concat_linear"
FUSION_SUM_LINEAR = "sum_linear"
FUSION_HADAMARD = "hadamard"
FUSION_OPERATORS = (FUSION_MEAN, FUSION_CONCAT_LINEAR, FUSION_SUM_LINEAR, FUSION_HADAMARD)
LEARNED_FUSIONS = (FUSION_CONCAT_LINEAR, FUSION_SUM_LINEAR)


@dataclass
class Linear:
    w: np.ndarray
    b: np.ndarray


@dataclass
class Encoder:
    """Two-layer ReLU MLP: x -> relu(W1 x + b1) -> W2 h + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class FissionEncoder(Encoder):
    split_dims: tuple  # (d_r, d_s, d_u); output width is their sum


@dataclass
class FissionLatent:
    z_r: np.ndarray
    z_s: np.ndarray
    z_u: np.ndarray


@dataclass
class HeadSet:
    unique: dict                 # modality -> Linear(d_u -> C)
    redundant: Linear            # shared across the agent's modalities
    synergistic: Linear = None   # present exactly for multimodal agents
    fusion: Linear = None        # learned fusion map, exchanged with the synergistic head


@dataclass
class AgentState:
    agent_id: int
    modalities: tuple
    strategy: str
    encoders: dict               # modality -> Encoder/FissionEncoder
    heads: HeadSet = None        # fission model (strategy "parse")
    classifiers: dict = None     # dsgd_modality: modality -> Linear
    classifier: Linear = None    # dsgd_task / dsgd_hybrid (fused or unimodal)
    train_idx: np.ndarray = None
    test_idx: np.ndarray = None

    @property
    def is_multimodal(self):
        return len(self.modalities) >= 2

    @property
    def signature(self):
        return "+".join(f"m{m}" for m in self.modalities)

    def _block_refs(self):
        """(owner, attr) per canonical block name, in a fixed order."""
        refs = {}
        for m in self.modalities:
            enc = self.encoders[m]
            for attr in ("w1", "b1", "w2", "b2"):
                refs[f"enc.{m}.{attr}"] = (enc, attr)
        if self.heads is not None:
            for m in self.modalities:
                head = self.heads.unique[m]
                refs[f"uhead.{m}.w"] = (head, "w")
                refs[f"uhead.{m}.b"] = (head, "b")
            refs["rhead.w"] = (self.heads.redundant, "w")
            refs["rhead.b"] = (self.heads.redundant, "b")
            if self.heads.synergistic is not None:
                refs["shead.w"] = (self.heads.synergistic, "w")
                refs["shead.b"] = (self.heads.synergistic, "b")
            if self.heads.fusion is not None:
                refs["fusion.w"] = (self.heads.fusion, "w")
                refs["fusion.b"] = (self.heads.fusion, "b")
        if self.classifiers is not None:
            for m in self.modalities:
                clf = self.classifiers[m]
                refs[f"clf.{m}.w"] = (clf, "w")
                refs[f"clf.{m}.b"] = (clf, "b")
        if self.classifier is not None:
            refs["clf.w"] = (self.classifier, "w")
            refs["clf.b"] = (self.classifier, "b")
        return refs

    def param_blocks(self):
        """Live views of every parameter tensor, keyed by block name."""
        return {name: getattr(obj, attr) for name, (obj, attr) in self._block_refs().items()}

    def set_param_block(self, name, value):
        obj, attr = self._block_refs()[name]
        setattr(obj, attr, np.asarray(value, dtype=np.float64))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_linear(rng, out_dim, in_dim):
    # weight then bias, both from the layer's Glorot limit, in draw order
    w = _glorot(rng, (out_dim, in_dim), in_dim, out_dim)
    b = _glorot(rng, (out_dim,), in_dim, out_dim)
    return Linear(w, b)


def _init_encoder(rng, in_dim, hidden_dim, out_dim, split_dims=None):
    w1 = _glorot(rng, (hidden_dim, in_dim), in_dim, hidden_dim)
    b1 = _glorot(rng, (hidden_dim,), in_dim, hidden_dim)
    w2 = _glorot(rng, (out_dim, hidden_dim), hidden_dim, out_dim)
    b2 = _glorot(rng, (out_dim,), hidden_dim, out_dim)
    if split_dims is None:
        return Encoder(w1, b1, w2, b2)
    return FissionEncoder(w1, b1, w2, b2, tuple(split_dims))


def init_agent(agent_id, modalities, strategy, input_dims, hidden_dim,
               split_dims, n_classes, fusion_operator, rng):
    """Build an agent with parameters drawn in a fixed order from ``rng``.

    ``input_dims`` maps modality -> input width. The draw order (encoders
    by modality, then heads) is part of the determinism contract.
    """
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    if fusion_operator not in FUSION_OPERATORS:
        raise ConfigurationError(f"unknown fusion operator {fusion_operator!r}")
    modalities = tuple(sorted(modalities))
    if not modalities:
        raise ConfigurationError("agent must own at least one modality")
    d_r, d_s, d_u = split_dims
    latent_dim = d_r + d_s + d_u
    multimodal = len(modalities) >= 2

    if strategy == PARSE:
        encoders = {m: _init_encoder(rng, input_dims[m], hidden_dim, latent_dim, split_dims)
                    for m in modalities}
        unique = {m: _init_linear(rng, n_classes, d_u) for m in modalities}
        redundant = _init_linear(rng, n_classes, d_r)
        synergistic = _init_linear(rng, n_classes, d_s) if multimodal else None
        fusion = None
        if multimodal and fusion_operator in LEARNED_FUSIONS:
            in_dim = d_s * len(modalities) if fusion_operator == FUSION_CONCAT_LINEAR else d_s
            fusion = _init_linear(rng, d_s, in_dim)
        heads = HeadSet(unique, redundant, synergistic, fusion)
        return AgentState(agent_id, modalities, strategy, encoders, heads=heads)

    encoders = {m: _init_encoder(rng, input_dims[m], hidden_dim, latent_dim)
                for m in modalities}
    if strategy == DSGD_MODALITY:
        classifiers = {m: _init_linear(rng, n_classes, latent_dim) for m in modalities}
        return AgentState(agent_id, modalities, strategy, encoders, classifiers=classifiers)
    classifier = _init_linear(rng, n_classes, latent_dim)
    return AgentState(agent_id, modalities, strategy, encoders, classifier=classifier)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

@dataclass
class EncoderCache:
    """Intermediates kept for the analytic backward pass."""

    x: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray
    z: np.ndarray


def encoder_forward(encoder, xs):
    xs = numerics.as_matrix(xs)
    h_pre = numerics.affine_batch(xs, encoder.w1, encoder.b1)
    h = numerics.relu(h_pre)
    z = numerics.affine_batch(h, encoder.w2, encoder.b2)
    return EncoderCache(xs, h_pre, h, z)


def fission_slices(encoder, z):
    """Split latent columns into (z_r, z_s, z_u), in that fixed order."""
    d_r, d_s, d_u = encoder.split_dims
    return z[:, :d_r], z[:, d_r:d_r + d_s], z[:, d_r + d_s:]


def encode(encoder, x):
    """Single-vector fission encode -> FissionLatent."""
    z = encoder_forward(encoder, numerics.as_vector(x)[None, :]).z
    z_r, z_s, z_u = fission_slices(encoder, z)
    return FissionLatent(z_r[0], z_s[0], z_u[0])


def fuse_batch(zs_list, operator, fusion=None):
    """Fuse per-modality synergistic slices, rows = samples.

    mean           elementwise average;
    sum_linear     elementwise sum, then the learned map;
    concat_linear  column concatenation, then the learned map;
    hadamard       elementwise product.
    """
    if operator not in FUSION_OPERATORS:
        raise ConfigurationError(f"unknown fusion operator {operator!r}")
    if len(zs_list) < 2:
        raise ConfigurationError("fusion needs at least 2 modality latents")
    if operator == FUSION_MEAN:
        return sum(zs_list) / len(zs_list)
    if operator == FUSION_HADAMARD:
        out = zs_list[0].copy()
        for z in zs_list[1:]:
            out *= z
        return out
    if fusion is None:
        raise ConfigurationError(f"{operator} fusion requires learned parameters")
    if operator == FUSION_SUM_LINEAR:
        return numerics.affine_batch(sum(zs_list), fusion.w, fusion.b)
    return numerics.affine_batch(np.concatenate(zs_list, axis=1), fusion.w, fusion.b)


def fuse_batch_backward(d_fused, zs_list, operator, fusion=None):
    """Returns (d_zs_list, d_fusion_w, d_fusion_b); the latter two are None
    for parameter-free operators."""
    k = len(zs_list)
    if operator == FUSION_MEAN:
        return [d_fused / k for _ in range(k)], None, None
    if operator == FUSION_HADAMARD:
        d_zs = []
        for m in range(k):
            other = d_fused.copy()
            for j in range(k):
                if j != m:
                    other *= zs_list[j]
            d_zs.append(other)
        return d_zs, None, None
    if operator == FUSION_SUM_LINEAR:
        total = sum(zs_list)
        d_total, d_w, d_b = numerics.affine_batch_backward(total, fusion.w, d_fused)
        return [d_total.copy() for _ in range(k)], d_w, d_b
    concat = np.concatenate(zs_list, axis=1)
    d_concat, d_w, d_b = numerics.affine_batch_backward(concat, fusion.w, d_fused)
    d = zs_list[0].shape[1]
    return [d_concat[:, m * d:(m + 1) * d] for m in range(k)], d_w, d_b


def fuse(latents, operator, fusion=None):
    """Single-sample fusion of a list of vectors."""
    rows = [numerics.as_vector(z)[None, :] for z in latents]
    return fuse_batch(rows, operator, fusion)[0]


def _head_logits(head, z):
    return numerics.affine_batch(z, head.w, head.b)


def predict_batch(agent, features, fusion_operator=FUSION_MEAN):
    """Logits (n, C) for a batch; requires every owned modality present."""
    for m in agent.modalities:
        if m not in features:
            raise ConfigurationError(f"agent {agent.agent_id} is missing modality {m}")

    if agent.strategy == PARSE:
        per_modality = []
        zs_list = []
        for m in agent.modalities:
            enc = agent.encoders[m]
            z_r, z_s, z_u = fission_slices(enc, encoder_forward(enc, features[m]).z)
            per_modality.append(_head_logits(agent.heads.unique[m], z_u)
                                + _head_logits(agent.heads.redundant, z_r))
            zs_list.append(z_s)
        logits = sum(per_modality)
        if agent.is_multimodal:
            fused = fuse_batch(zs_list, fusion_operator, agent.heads.fusion)
            logits = logits + _head_logits(agent.heads.synergistic, fused)
        return logits

    latents = {m: encoder_forward(agent.encoders[m], features[m]).z for m in agent.modalities}
    if agent.strategy == DSGD_MODALITY:
        per_modality = [_head_logits(agent.classifiers[m], latents[m]) for m in agent.modalities]
        return sum(per_modality) / len(per_modality)
    fused = sum(latents.values()) / len(latents)
    return _head_logits(agent.classifier, fused)


def predict(agent, features, fusion_operator=FUSION_MEAN):
    """Single-sample logits; ties at argmax resolve to the lowest class."""
    rows = {m: numerics.as_vector(x)[None, :] for m, x in features.items()}
    return predict_batch(agent, rows, fusion_operator)[0]
