"""Training losses and their analytic gradients.

Every loss returns ``(value(s), grads)`` where ``grads`` maps parameter
block names (see model.py) to arrays of matching shape; blocks that a
loss cannot touch are simply absent. Batch means use 1/|batch|.

The contrastive diversity term, per sample j and ordered modality pair
(m, m'), m != m':

    -log  exp(sim(z_r^m, z_r^m') / tau)
          -----------------------------------------------------
          exp(sim(z_r^m, z_u^m) / tau) + exp(sim(z_r^m, z_s^m) / tau)

Note the positive similarity is *not* part of the denominator, so the
term is unbounded below and the loss can be negative. The
``include_positive_in_denominator`` flag switches to the conventional
normalized form for comparison runs; the default keeps the formula
above.

Multimodal agents train only the ensemble objective (plus the weighted
contrastive term) -- there are no per-component classification losses.
Per-modality cross-entropies are still reported in LossBreakdown as
diagnostics.
"""

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import numerics
from .errors import ConfigurationError


@dataclass(frozen=True)
class LossBreakdown:
    """total = cls + beta*nce (exact); nce is recorded as 0 for agents
    without a contrastive term."""

    total: float
    cls: float
    nce: float
    per_modality_cls: dict


def _require_batch(batch):
    features, labels = batch
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigurationError("empty batch")
    return features, labels


def _acc(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def _encoder_backward(enc, cache, d_z, grads, prefix):
    """Backprop d_z through a two-layer encoder into grads[prefix.*]."""
    d_h, d_w2, d_b2 = numerics.affine_batch_backward(cache.h, enc.w2, d_z)
    d_hpre = numerics.relu_backward(cache.h_pre, d_h)
    _, d_w1, d_b1 = numerics.affine_batch_backward(cache.x, enc.w1, d_hpre)
    _acc(grads, f"{prefix}.w1", d_w1)
    _acc(grads, f"{prefix}.b1", d_b1)
    _acc(grads, f"{prefix}.w2", d_w2)
    _acc(grads, f"{prefix}.b2", d_b2)


def _fission_forward(agent, features):
    """Per-modality caches, latent slices, and head-sum logits."""
    caches, slices, per_logits = {}, {}, {}
    for m in agent.modalities:
        enc = agent.encoders[m]
        cache = mdl.encoder_forward(enc, features[m])
        z_r, z_s, z_u = mdl.fission_slices(enc, cache.z)
        caches[m] = cache
        slices[m] = (z_r, z_s, z_u)
        per_logits[m] = (numerics.affine_batch(z_u, agent.heads.unique[m].w, agent.heads.unique[m].b)
                         + numerics.affine_batch(z_r, agent.heads.redundant.w, agent.heads.redundant.b))
    return caches, slices, per_logits


def _fission_head_backward(agent, m, slices, d_logits, grads):
    """Backprop d_logits through f_u + f_r of modality m; returns the
    latent gradient with zero columns for the synergistic slice."""
    z_r, z_s, z_u = slices[m]
    uhead, rhead = agent.heads.unique[m], agent.heads.redundant
    d_zu, d_wu, d_bu = numerics.affine_batch_backward(z_u, uhead.w, d_logits)
    d_zr, d_wr, d_br = numerics.affine_batch_backward(z_r, rhead.w, d_logits)
    _acc(grads, f"uhead.{m}.w", d_wu)
    _acc(grads, f"uhead.{m}.b", d_bu)
    _acc(grads, "rhead.w", d_wr)
    _acc(grads, "rhead.b", d_br)
    return np.concatenate([d_zr, np.zeros_like(z_s), d_zu], axis=1)


# ---------------------------------------------------------------------------
# classification losses
# ---------------------------------------------------------------------------

def cls_loss(agent, batch):
    """Supervised loss for unimodal fission agents and all baseline agents.

    Fission (strategy "parse", single modality): cross-entropy of
    f_u(z_u) + f_r(z_r); gradients reach the encoder, unique head, and
    redundant head only. Baselines: cross-entropy of the monolithic
    model (per-modality classifiers summed for dsgd_modality multimodal
    agents, mean-fused latent for dsgd_task / dsgd_hybrid).
    """
    features, labels = _require_batch(batch)
    n = len(labels)
    grads = {}

    if agent.strategy == mdl.PARSE:
        if agent.is_multimodal:
            raise ConfigurationError(
                "cls_loss on a multimodal fission agent; ensemble_loss owns that case")
        m = agent.modalities[0]
        caches, slices, per_logits = _fission_forward(agent, features)
        losses, d_logits = numerics.softmax_cross_entropy_batch(per_logits[m], labels)
        loss = float(losses.mean())
        d_logits = d_logits / n
        d_z = _fission_head_backward(agent, m, slices, d_logits, grads)
        _encoder_backward(agent.encoders[m], caches[m], d_z, grads, f"enc.{m}")
        return loss, grads

    caches = {m: mdl.encoder_forward(agent.encoders[m], features[m]) for m in agent.modalities}
    if agent.strategy == mdl.DSGD_MODALITY:
        total = 0.0
        for m in agent.modalities:
            clf = agent.classifiers[m]
            logits = numerics.affine_batch(caches[m].z, clf.w, clf.b)
            losses, d_logits = numerics.softmax_cross_entropy_batch(logits, labels)
            total += float(losses.mean())
            d_logits = d_logits / n
            d_z, d_w, d_b = numerics.affine_batch_backward(caches[m].z, clf.w, d_logits)
            _acc(grads, f"clf.{m}.w", d_w)
            _acc(grads, f"clf.{m}.b", d_b)
            _encoder_backward(agent.encoders[m], caches[m], d_z, grads, f"enc.{m}")
        return total, grads

    k = len(agent.modalities)
    fused = sum(caches[m].z for m in agent.modalities) / k
    logits = numerics.affine_batch(fused, agent.classifier.w, agent.classifier.b)
    losses, d_logits = numerics.softmax_cross_entropy_batch(logits, labels)
    loss = float(losses.mean())
    d_logits = d_logits / n
    d_fused, d_w, d_b = numerics.affine_batch_backward(fused, agent.classifier.w, d_logits)
    _acc(grads, "clf.w", d_w)
    _acc(grads, "clf.b", d_b)
    for m in agent.modalities:
        _encoder_backward(agent.encoders[m], caches[m], d_fused / k, grads, f"enc.{m}")
    return loss, grads


# ---------------------------------------------------------------------------
# contrastive diversity
# ---------------------------------------------------------------------------

def _pad_cols(a, width):
    if a.shape[1] == width:
        return a
    return np.concatenate([a, np.zeros((a.shape[0], width - a.shape[1]))], axis=1)


def _mixed_width_cosine(a, b):
    """Row cosine between slices of possibly different widths; the
    narrower one is zero-padded, which leaves norms untouched."""
    width = max(a.shape[1], b.shape[1])
    return numerics.cosine_rows(_pad_cols(a, width), _pad_cols(b, width))


def _mixed_width_cosine_backward(a, b, d_out):
    width = max(a.shape[1], b.shape[1])
    da, db = numerics.cosine_rows_backward(_pad_cols(a, width), _pad_cols(b, width), d_out)
    return da[:, :a.shape[1]], db[:, :b.shape[1]]


def nce_loss(agent, batch, tau, include_positive_in_denominator=False):
    """Contrastive alignment of redundant slices across modalities."""
    if agent.strategy != mdl.PARSE or not agent.is_multimodal:
        raise ConfigurationError("nce_loss requires a multimodal fission agent")
    if tau <= 0:
        raise ConfigurationError("temperature must be > 0")
    features, labels = _require_batch(batch)
    n = len(labels)
    grads = {}

    caches, slices, _ = _fission_forward(agent, features)
    d_slices = {m: [np.zeros_like(s) for s in slices[m]] for m in agent.modalities}

    total = 0.0
    for m in agent.modalities:
        z_r, z_s, z_u = slices[m]
        for mp in agent.modalities:
            if mp == m:
                continue
            z_rp = slices[mp][0]
            pos = numerics.cosine_rows(z_r, z_rp)
            neg_u = _mixed_width_cosine(z_r, z_u)
            neg_s = _mixed_width_cosine(z_r, z_s)
            entries = [neg_u, neg_s]
            if include_positive_in_denominator:
                entries.append(pos)
            scaled = np.stack(entries, axis=1) / tau
            peak = scaled.max(axis=1, keepdims=True)
            lse = peak[:, 0] + np.log(np.exp(scaled - peak).sum(axis=1))
            total += float((-pos / tau + lse).sum())

            soft = np.exp(scaled - peak)
            soft /= soft.sum(axis=1, keepdims=True)
            d_pos = np.full(n, -1.0 / (tau * n))
            if include_positive_in_denominator:
                d_pos = d_pos + soft[:, 2] / (tau * n)
            d_neg_u = soft[:, 0] / (tau * n)
            d_neg_s = soft[:, 1] / (tau * n)

            da, db = numerics.cosine_rows_backward(z_r, z_rp, d_pos)
            d_slices[m][0] += da
            d_slices[mp][0] += db
            da, db = _mixed_width_cosine_backward(z_r, z_u, d_neg_u)
            d_slices[m][0] += da
            d_slices[m][2] += db
            da, db = _mixed_width_cosine_backward(z_r, z_s, d_neg_s)
            d_slices[m][0] += da
            d_slices[m][1] += db

    for m in agent.modalities:
        d_z = np.concatenate(d_slices[m], axis=1)
        _encoder_backward(agent.encoders[m], caches[m], d_z, grads, f"enc.{m}")
    return total / n, grads


# ---------------------------------------------------------------------------
# ensemble objective
# ---------------------------------------------------------------------------

def _ensemble_loss(agent, batch, operator):
    features, labels = _require_batch(batch)
    n = len(labels)
    grads = {}

    caches, slices, per_logits = _fission_forward(agent, features)
    zs_list = [slices[m][1] for m in agent.modalities]
    fused = mdl.fuse_batch(zs_list, operator, agent.heads.fusion)
    shead = agent.heads.synergistic
    logits = numerics.affine_batch(fused, shead.w, shead.b) + sum(per_logits.values())

    losses, d_logits = numerics.softmax_cross_entropy_batch(logits, labels)
    loss = float(losses.mean())
    d_logits = d_logits / n

    d_fused, d_ws, d_bs = numerics.affine_batch_backward(fused, shead.w, d_logits)
    _acc(grads, "shead.w", d_ws)
    _acc(grads, "shead.b", d_bs)
    d_zs_list, d_fw, d_fb = mdl.fuse_batch_backward(d_fused, zs_list, operator, agent.heads.fusion)
    if d_fw is not None:
        _acc(grads, "fusion.w", d_fw)
        _acc(grads, "fusion.b", d_fb)

    diagnostics = {}
    for m, d_zs in zip(agent.modalities, d_zs_list):
        d_z = _fission_head_backward(agent, m, slices, d_logits, grads)
        d_r = agent.encoders[m].split_dims[0]
        d_z[:, d_r:d_r + d_zs.shape[1]] += d_zs
        _encoder_backward(agent.encoders[m], caches[m], d_z, grads, f"enc.{m}")
        diagnostics[m] = float(numerics.softmax_cross_entropy_batch(per_logits[m], labels)[0].mean())
    return loss, grads, diagnostics


def ensemble_loss(agent, batch, operator):
    """Cross-entropy of f_s(fused) + sum_m [f_u + f_r]; gradients reach
    every encoder, every head, and any learned fusion parameters."""
    if agent.strategy != mdl.PARSE or not agent.is_multimodal:
        raise ConfigurationError("ensemble_loss requires a multimodal fission agent")
    loss, grads, _ = _ensemble_loss(agent, batch, operator)
    return loss, grads


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------

def total_loss(agent, batch, beta, tau, operator,
               include_positive_in_denominator=False):
    """Local objective: cls for unimodal agents, ensemble + beta*nce for
    multimodal agents. Returns (LossBreakdown, grads); the combined
    gradient is exactly grads(ensemble) + beta*grads(nce)."""
    if agent.strategy != mdl.PARSE:
        raise ConfigurationError("total_loss is the fission objective; baselines use cls_loss")
    if not agent.is_multimodal:
        value, grads = cls_loss(agent, batch)
        m = agent.modalities[0]
        return LossBreakdown(value, value, 0.0, {m: value}), grads

    ens_value, grads, diagnostics = _ensemble_loss(agent, batch, operator)
    nce_value, nce_grads = nce_loss(agent, batch, tau, include_positive_in_denominator)
    for name, g in nce_grads.items():
        _acc(grads, name, beta * g)
    return LossBreakdown(ens_value + beta * nce_value, ens_value, nce_value, diagnostics), grads


def local_loss(agent, batch, config):
    """Strategy dispatch used by the trainer; returns (LossBreakdown, grads)."""
    if agent.strategy == mdl.PARSE:
        return total_loss(agent, batch, config.beta, config.tau, config.fusion,
                          config.nce_include_positive_in_denominator)
    value, grads = cls_loss(agent, batch)
    per_modality = {m: value for m in agent.modalities} if not agent.is_multimodal else {}
    return LossBreakdown(value, value, 0.0, per_modality), grads
