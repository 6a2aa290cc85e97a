"""The loss zoo: contrastive losses over instance embeddings and label
prototypes, plus the logit-based baselines (binary cross-entropy, asymmetric,
ZLPR).

Every contrastive loss is an instance of one generalized engine: per anchor,
a set of positives with nonnegative attraction weights, a denominator set,
and a tempered-cosine softmax. The engine returns the loss value together
with exact analytic gradients with respect to the embeddings and (when used)
the prototypes, differentiated through the cosine normalization rather than
the dot-product shorthand. Gradients are verified against the central
finite-difference oracle in the verification module.

Per-anchor terms are accumulated with numpy reductions in fixed order
(anchor-major, index-ascending), so results are bit-reproducible.

Loss selection by string identifier:
  bce | asy | zlpr | base | proto | mulsupcon | msc | reg | reg-noreg |
  supcon | supcon-reg
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .datamodel import ContrastiveBatch
from .errors import ConfigError, DomainError
from .numerics import (
    as_matrix,
    masked_logsumexp,
    tempered_cosine_backward,
    tempered_cosine_matrix,
)

LOGIT_LOSS_IDS = ("bce", "asy", "zlpr")
CONTRASTIVE_LOSS_IDS = (
    "base",
    "proto",
    "mulsupcon",
    "msc",
    "reg",
    "reg-noreg",
    "supcon",
    "supcon-reg",
)
LOSS_IDS = LOGIT_LOSS_IDS + CONTRASTIVE_LOSS_IDS

PROTOTYPE_LOSS_IDS = ("proto", "msc", "reg", "reg-noreg")
REGULARIZED_LOSS_IDS = ("reg", "supcon-reg")


@dataclass
class LossConfig:
    """Scalar knobs shared by the loss zoo.

    tau is the softmax temperature applied inside the cosine similarity;
    alpha the shared-label overlap exponent; beta the down-weight on instance
    negatives in the prototype denominator of the MSC loss; gamma_pos /
    gamma_neg / margin parametrize the asymmetric logit loss; epsilon guards
    0/0 in weight normalization and nothing else.
    """

    tau: float = 0.1
    alpha: float = 0.0
    beta: float = 1.0
    gamma_pos: float = 0.0
    gamma_neg: float = 1.0
    margin: float = 0.0
    use_prototypes: bool = False
    use_regularizer: bool = True
    use_alpha_weighting: bool = False
    epsilon: float = 1e-12
    proto_denominator: str = "prototypes"

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.beta < 0:
            # beta = 0 is the masking limit: instance negatives leave the denominator
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ConfigError("gamma_pos and gamma_neg must be nonnegative")
        if not (0 <= self.margin < 1):
            raise ConfigError(f"margin must be in [0, 1), got {self.margin}")
        if not (0 < self.epsilon <= 1e-6):
            raise ConfigError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")
        if self.proto_denominator not in ("prototypes", "batch+prototypes"):
            raise ConfigError(
                f"proto_denominator must be 'prototypes' or 'batch+prototypes', "
                f"got {self.proto_denominator!r}"
            )


@dataclass
class PairStructure:
    """Intermediate of the contrastive engine.

    The pool is the concatenation of the batch embeddings (when
    include_batch) and the prototypes (when include_prototypes); anchors are
    always the batch instances. coeff holds the final forward coefficient of
    each positive pair; lam_norm is coeff normalized to sum to one per anchor
    (the quantity the regularizer gate compares against sigma); sigma holds
    the denominator softmax scores and is gradient-opaque.
    """

    include_batch: bool
    include_prototypes: bool
    n_batch_in_pool: int
    positive_mask: np.ndarray      # (n, m) bool
    denominator_mask: np.ndarray   # (n, m) bool, after any g-multiplier masking
    lam: np.ndarray                # (n, m) raw positive weights
    coeff: np.ndarray              # (n, m) final forward coefficients
    lam_norm: np.ndarray           # (n, m) coeff / (per-anchor total mass)
    sigma: np.ndarray              # (n, m) softmax scores, 0 off the denominator
    outer: np.ndarray              # (n,) per-anchor outer weights

    @property
    def total_mass(self) -> np.ndarray:
        return self.coeff.sum(axis=1)

    def negatives_mask(self) -> np.ndarray:
        return self.denominator_mask & ~self.positive_mask


@dataclass
class GradientBundle:
    """Loss value plus exact gradients and per-positive gate bookkeeping.

    gate_anchor / gate_pool / gate_value list, for every positive pair in
    anchor-major index-ascending order, the gate coefficient
    (-lam_norm + sigma). combined_coeff holds the final per-positive
    coefficient on the similarity (host term plus any regularizer term,
    before the outer weight), which the clamp invariant constrains to
    min(0, gate) when the regularizer is on.
    """

    loss_value: float
    d_z: np.ndarray | None
    d_prototypes: np.ndarray | None
    gate_anchor: np.ndarray
    gate_pool: np.ndarray
    gate_value: np.ndarray
    combined_coeff: np.ndarray
    structure: PairStructure


@dataclass
class RegTermResult:
    """Forward value and gradients contributed by the gate regularizer."""

    value_per_anchor: np.ndarray   # (n,) not yet scaled by the outer weights
    d_z: np.ndarray
    d_prototypes: np.ndarray | None
    gates: np.ndarray              # (n, m), zero off positive pairs


@dataclass
class LogitLossResult:
    """Value and gradient of a logit-based loss."""

    loss_value: float
    d_logits: np.ndarray


def prr(gate_values) -> float | None:
    """Positive regularization ratio: fraction of positive pairs whose gate
    coefficient is strictly positive. None when there are no positive pairs."""
    g = np.asarray(gate_values, dtype=np.float64)
    if g.size == 0:
        return None
    return float(np.mean(g > 0.0))


def _pool_embeddings(batch: ContrastiveBatch, include_batch: bool, include_prototypes: bool):
    parts = []
    if include_batch:
        parts.append(batch.z)
    if include_prototypes:
        if batch.prototypes is None:
            raise ConfigError("this loss requires prototypes, but the batch has none")
        parts.append(batch.prototypes)
    if not parts:
        raise ConfigError("pool must include the batch, the prototypes, or both")
    n_batch = batch.n if include_batch else 0
    return np.vstack(parts), n_batch


def reg_term(batch: ContrastiveBatch, structure: PairStructure, cfg: LossConfig) -> RegTermResult:
    """Gate regularizer for positive pairs.

    For each positive pair (i, k) with normalized weight L = lam_norm[i, k]
    and softmax score sigma[i, k], the gate is max(0, -L + sigma). The
    forward contribution is -sum(gate * similarity); the gate itself is a
    constant for gradient purposes (sigma and lam_norm are detached), so each
    open gate subtracts exactly its coefficient from the host gradient and a
    positive pair can never push with a net repulsive coefficient.
    """
    pool, n_batch = _pool_embeddings(
        batch, structure.include_batch, structure.include_prototypes
    )
    s = tempered_cosine_matrix(batch.z, pool, cfg.tau)
    gates = np.where(
        structure.positive_mask,
        np.maximum(0.0, -structure.lam_norm + structure.sigma),
        0.0,
    )
    value_per_anchor = -np.sum(gates * np.where(structure.positive_mask, s, 0.0), axis=1)
    upstream = -structure.outer[:, None] * gates
    d_anchor, d_pool = tempered_cosine_backward(batch.z, pool, cfg.tau, upstream)
    d_z = d_anchor
    if structure.include_batch:
        d_z = d_z + d_pool[:n_batch]
    d_prototypes = None
    if structure.include_prototypes:
        d_prototypes = d_pool[n_batch:]
    return RegTermResult(
        value_per_anchor=value_per_anchor,
        d_z=d_z,
        d_prototypes=d_prototypes,
        gates=gates,
    )


def _run_engine(
    batch: ContrastiveBatch,
    *,
    coeff: np.ndarray,
    denom_mask: np.ndarray,
    outer: np.ndarray,
    include_batch: bool,
    include_prototypes: bool,
    cfg: LossConfig,
    use_reg: bool,
    log_g: np.ndarray | None = None,
    lam_raw: np.ndarray | None = None,
    strict: bool = False,
    compute_gradients: bool = True,
) -> GradientBundle:
    """Shared forward/backward for every contrastive loss.

    coeff[i, k] is the forward coefficient of positive pair (i, k); rows may
    sum to any positive total mass T_i (losses that normalize per anchor pass
    rows summing to 1). The per-anchor term is
    -sum_k coeff[i, k] * log( exp(s_ik) / sum_j g_ij exp(s_ij) ), summed over
    the denominator set, and the loss is sum_i outer_i * term_i. Anchors with
    zero positive mass contribute nothing (a removable singularity of the
    normalized form); strict mode turns them into a domain error.

    compute_gradients=False skips the backward pass and gate extraction
    (d_z and d_prototypes come back as None, gate arrays empty); the
    finite-difference oracle uses this to evaluate values cheaply.
    """
    pool, n_batch = _pool_embeddings(batch, include_batch, include_prototypes)
    n, m = batch.n, pool.shape[0]
    coeff = np.asarray(coeff, dtype=np.float64)
    if coeff.shape != (n, m):
        raise DomainError(f"coeff shape {coeff.shape} != ({n}, {m})")
    denom_mask = np.asarray(denom_mask, dtype=bool)
    outer = np.asarray(outer, dtype=np.float64)

    s = tempered_cosine_matrix(batch.z, pool, cfg.tau)
    if log_g is None:
        den_logits = s
        eff_mask = denom_mask
    else:
        with np.errstate(invalid="ignore"):
            den_logits = s + log_g
        eff_mask = denom_mask & (log_g > -np.inf)

    lse = masked_logsumexp(den_logits, eff_mask)
    sigma = np.exp(np.where(eff_mask, den_logits - lse[:, None], -np.inf))
    log_p = s - lse[:, None]

    positive_mask = coeff > 0.0
    total = coeff.sum(axis=1)
    if strict and np.any(total <= 0.0):
        bad = int(np.nonzero(total <= 0.0)[0][0])
        raise DomainError(f"anchor {bad} has no positive pairs (strict mode)")
    safe_total = np.where(total > 0.0, total, 1.0)
    lam_norm = np.where(positive_mask, coeff / safe_total[:, None], 0.0)

    per_anchor = -np.sum(coeff * np.where(positive_mask, log_p, 0.0), axis=1)
    loss_value = float(np.dot(outer, per_anchor))

    structure = PairStructure(
        include_batch=include_batch,
        include_prototypes=include_prototypes,
        n_batch_in_pool=n_batch,
        positive_mask=positive_mask,
        denominator_mask=eff_mask,
        lam=coeff if lam_raw is None else np.asarray(lam_raw, dtype=np.float64),
        coeff=coeff,
        lam_norm=lam_norm,
        sigma=sigma,
        outer=outer,
    )

    if not compute_gradients:
        if use_reg:
            gates = np.where(
                positive_mask, np.maximum(0.0, -lam_norm + sigma), 0.0
            )
            loss_value += float(
                np.dot(outer, -np.sum(gates * np.where(positive_mask, s, 0.0), axis=1))
            )
        empty = np.empty(0)
        return GradientBundle(
            loss_value=loss_value,
            d_z=None,
            d_prototypes=None,
            gate_anchor=empty,
            gate_pool=empty,
            gate_value=empty,
            combined_coeff=empty,
            structure=structure,
        )

    # d loss / d s: -coeff on the positive slot, plus T_i * sigma over the denominator
    upstream = outer[:, None] * (-coeff + total[:, None] * sigma)
    d_anchor, d_pool = tempered_cosine_backward(batch.z, pool, cfg.tau, upstream)
    d_z = d_anchor
    if include_batch:
        d_z = d_z + d_pool[:n_batch]
    d_prototypes = d_pool[n_batch:] if include_prototypes else None

    host_coeff = np.where(positive_mask, -coeff + total[:, None] * sigma, 0.0)
    if use_reg:
        reg = reg_term(batch, structure, cfg)
        loss_value += float(np.dot(outer, reg.value_per_anchor))
        d_z = d_z + reg.d_z
        if d_prototypes is not None and reg.d_prototypes is not None:
            d_prototypes = d_prototypes + reg.d_prototypes
        combined = host_coeff - reg.gates
    else:
        combined = host_coeff

    gi, gk = np.nonzero(positive_mask)
    gate_value = (-lam_norm + sigma)[gi, gk]

    if batch.prototypes is not None and d_prototypes is None:
        d_prototypes = np.zeros_like(batch.prototypes)

    return GradientBundle(
        loss_value=loss_value,
        d_z=d_z,
        d_prototypes=d_prototypes,
        gate_anchor=gi,
        gate_pool=gk,
        gate_value=gate_value,
        combined_coeff=combined[gi, gk],
        structure=structure,
    )


def _label_stats(y: np.ndarray):
    yf = y.astype(np.float64)
    sizes = yf.sum(axis=1)
    inter = yf @ yf.T
    union = sizes[:, None] + sizes[None, :] - inter
    return yf, sizes, inter, union


def _off_diagonal_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def generalized_contrastive(
    batch: ContrastiveBatch,
    weight_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    cfg: LossConfig,
    denominator: str = "batch",
    use_reg: bool = False,
    strict: bool = False,
    compute_gradients: bool = True,
) -> GradientBundle:
    """Generalized contrastive loss with a pluggable positive-weight strategy.

    weight_fn(anchor_labels, pool_labels) must return the (n, m) raw weight
    matrix lam, zero outside the positive pairs; the engine normalizes each
    anchor's weights to sum to one and averages the per-anchor terms over the
    batch. denominator selects the softmax support: "batch" (others in the
    batch), "prototypes", or "batch+prototypes"; the anchor itself is always
    excluded and the numerator pair is always included.
    """
    include_batch = denominator in ("batch", "batch+prototypes")
    include_protos = denominator in ("prototypes", "batch+prototypes")
    if denominator not in ("batch", "prototypes", "batch+prototypes"):
        raise ConfigError(f"unknown denominator strategy {denominator!r}")
    pool_labels_parts = []
    if include_batch:
        pool_labels_parts.append(batch.y.astype(np.float64))
    if include_protos:
        pool_labels_parts.append(np.eye(batch.n_labels))
    pool_y = np.vstack(pool_labels_parts)
    lam = np.asarray(weight_fn(batch.y.astype(np.float64), pool_y), dtype=np.float64)
    if np.any(lam < 0):
        raise DomainError("weight strategy produced negative weights")
    n = batch.n
    m = pool_y.shape[0]
    if lam.shape != (n, m):
        raise DomainError(f"weight strategy returned shape {lam.shape}, expected ({n}, {m})")
    if include_batch:
        lam[:, :n][np.eye(n, dtype=bool)] = 0.0

    denom_mask = np.ones((n, m), dtype=bool)
    if include_batch:
        denom_mask[:, :n] = _off_diagonal_mask(n)

    total = lam.sum(axis=1)
    coeff = np.where(total[:, None] > 0.0, lam / np.where(total > 0, total, 1.0)[:, None], 0.0)
    outer = np.full(n, 1.0 / n)
    return _run_engine(
        batch,
        coeff=coeff,
        denom_mask=denom_mask,
        outer=outer,
        include_batch=include_batch,
        include_prototypes=include_protos,
        cfg=cfg,
        use_reg=use_reg,
        lam_raw=lam,
        strict=strict,
        compute_gradients=compute_gradients,
    )


def loss_base(batch: ContrastiveBatch, cfg: LossConfig, strict: bool = False,
              compute_gradients: bool = True) -> GradientBundle:
    """Jaccard-weighted contrastive loss over batch instances.

    Positives of an anchor are the other instances sharing at least one
    label, weighted by Jaccard similarity of the label sets and normalized by
    their sum; the denominator is the rest of the batch. Anchors sharing no
    label with anyone are skipped.
    """

    def weights(anchor_y, pool_y):
        sizes_a = anchor_y.sum(axis=1)
        sizes_p = pool_y.sum(axis=1)
        inter = anchor_y @ pool_y.T
        union = sizes_a[:, None] + sizes_p[None, :] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            jac = np.where(inter > 0, inter / union, 0.0)
        return jac

    return generalized_contrastive(batch, weights, cfg, denominator="batch", strict=strict,
                                   compute_gradients=compute_gradients)


def loss_supcon(batch: ContrastiveBatch, cfg: LossConfig, use_reg: bool = False,
                compute_gradients: bool = True) -> GradientBundle:
    """Supervised contrastive loss for single-label batches; positives are
    the other instances of the anchor's class with uniform weights. With
    use_reg the gate regularizer is added on the positive pairs."""
    if np.any(batch.y.sum(axis=1) != 1):
        raise DomainError(
            "supcon requires exactly one label per instance; "
            "use the multi-label losses for multi-label batches"
        )

    def weights(anchor_y, pool_y):
        return anchor_y @ pool_y.T

    return generalized_contrastive(
        batch, weights, cfg, denominator="batch", use_reg=use_reg,
        compute_gradients=compute_gradients,
    )


def loss_supcon_reg(batch: ContrastiveBatch, cfg: LossConfig,
                    compute_gradients: bool = True) -> GradientBundle:
    return loss_supcon(batch, cfg, use_reg=True, compute_gradients=compute_gradients)


def loss_proto(batch: ContrastiveBatch, cfg: LossConfig,
               compute_gradients: bool = True) -> GradientBundle:
    """Prototype-anchored loss: each instance is attracted to the prototypes
    of its labels, uniformly weighted; the softmax runs over the prototype
    set (or over batch plus prototypes with proto_denominator set to
    "batch+prototypes"). Gradients flow to both embeddings and prototypes."""
    if batch.prototypes is None:
        raise ConfigError("proto loss requires prototypes")
    include_batch = cfg.proto_denominator == "batch+prototypes"

    def weights(anchor_y, pool_y):
        n, big_l = anchor_y.shape[0], anchor_y.shape[1]
        lam = np.zeros((n, pool_y.shape[0]))
        lam[:, pool_y.shape[0] - big_l:] = anchor_y
        return lam

    return generalized_contrastive(
        batch,
        weights,
        cfg,
        denominator="batch+prototypes" if include_batch else "prototypes",
        compute_gradients=compute_gradients,
    )


def loss_mulsupcon(batch: ContrastiveBatch, cfg: LossConfig,
                   compute_gradients: bool = True) -> GradientBundle:
    """Per-label contrastive loss: each (instance, label) pair acts as its
    own anchor with uniform weight over that label's other carriers, and the
    grand total is normalized by the number of (instance, label) pairs in the
    batch. Empty per-label positive sets drop out."""
    yf, sizes, _, _ = _label_stats(batch.y)
    n = batch.n
    cnt = yf.sum(axis=0)
    with np.errstate(divide="ignore"):
        invc = np.where(cnt > 1, 1.0 / np.maximum(cnt - 1.0, 1.0), 0.0)
    lam = (yf * invc[None, :]) @ yf.T
    lam[np.eye(n, dtype=bool)] = 0.0
    denom_mask = _off_diagonal_mask(n)
    outer = np.full(n, 1.0 / yf.sum())
    return _run_engine(
        batch,
        coeff=lam,
        denom_mask=denom_mask,
        outer=outer,
        include_batch=True,
        include_prototypes=False,
        cfg=cfg,
        use_reg=False,
        lam_raw=lam,
        compute_gradients=compute_gradients,
    )


def loss_msc(batch: ContrastiveBatch, cfg: LossConfig,
             compute_gradients: bool = True) -> GradientBundle:
    """Frequency-reweighted contrastive loss with prototypes.

    For each anchor label, the positives are the other carriers of that label
    plus its prototype; instance pairs are weighted by the inverse size of
    the label union, prototypes by one, normalized per label. The softmax
    denominator spans batch plus prototypes (minus the anchor), with instance
    terms multiplied by beta; beta = 0 removes instance negatives entirely.
    """
    if batch.prototypes is None:
        raise ConfigError("msc loss requires prototypes")
    yf, sizes, inter, union = _label_stats(batch.y)
    n, big_l = batch.n, batch.n_labels
    off_diag = _off_diagonal_mask(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        f_inst = np.where(off_diag & (union > 0), 1.0 / union, 0.0)
    # per-(anchor, label) normalizer: carriers' f plus 1 for the prototype
    norm = yf * ((f_inst @ yf) + 1.0)
    inner = np.where(norm > 0, yf / np.where(norm > 0, norm, 1.0), 0.0)
    coeff_inst = f_inst * (inner @ yf.T) * (inter > 0) * off_diag
    coeff_proto = inner
    coeff = np.hstack([coeff_inst, coeff_proto]) / sizes[:, None]

    denom_mask = np.ones((n, n + big_l), dtype=bool)
    denom_mask[:, :n] = off_diag
    log_g = np.zeros((n, n + big_l))
    with np.errstate(divide="ignore"):
        log_g[:, :n] = np.log(cfg.beta) if cfg.beta > 0 else -np.inf
    outer = np.full(n, 1.0 / n)
    return _run_engine(
        batch,
        coeff=coeff,
        denom_mask=denom_mask,
        outer=outer,
        include_batch=True,
        include_prototypes=True,
        cfg=cfg,
        use_reg=False,
        log_g=log_g,
        compute_gradients=compute_gradients,
    )


def _reg_coeff(batch: ContrastiveBatch, cfg: LossConfig):
    """Positive coefficients of the regularized loss on the joined pool
    (batch then prototypes; prototype labels are one-hot)."""
    yf, sizes, _, _ = _label_stats(batch.y)
    n, big_l = batch.n, batch.n_labels
    pool_y = np.vstack([yf, np.eye(big_l)])
    m = n + big_l
    self_cols = np.zeros((n, m), dtype=bool)
    self_cols[:, :n] = np.eye(n, dtype=bool)

    if cfg.use_alpha_weighting:
        inter_pool = yf @ pool_y.T
        pool_sizes = pool_y.sum(axis=1)
        ratio = inter_pool / pool_sizes[None, :]
        f_pool = np.where(inter_pool > 0, ratio ** cfg.alpha, 0.0)
        f_pool[self_cols] = 0.0
        # per-(anchor, label) normalizer over that label's pool carriers
        norm = yf * (f_pool @ pool_y)
        inner = np.where(norm > 0, yf / np.where(norm > 0, norm, 1.0), 0.0)
        lam = f_pool * (inner @ pool_y.T)
    else:
        cnt = yf.sum(axis=0)
        # pool carriers of label j excluding the anchor: cnt[j] instances - self + prototype
        inv = yf / cnt[None, :].clip(min=1.0)
        lam = inv @ pool_y.T
    lam[self_cols] = 0.0
    coeff = lam / sizes[:, None]
    return coeff, lam


def loss_reg(
    batch: ContrastiveBatch, cfg: LossConfig, use_reg: bool | None = None,
    compute_gradients: bool = True,
) -> GradientBundle:
    """Regularized multi-label contrastive loss with prototypes in the pool.

    Positive structure follows the per-label scheme of loss_mulsupcon, but
    the prototypes join the batch: each anchor label contributes its other
    carriers plus its prototype, uniformly weighted per label (or weighted by
    the shared-label overlap ratio when use_alpha_weighting is on), with
    outer weight one over the anchor's label count. The softmax denominator
    is batch plus prototypes minus the anchor. With the regularizer on, the
    detached gate term clamps every positive pair's combined gradient
    coefficient at zero from above.
    """
    if batch.prototypes is None:
        raise ConfigError("reg loss requires prototypes")
    if use_reg is None:
        use_reg = cfg.use_regularizer
    coeff, lam = _reg_coeff(batch, cfg)
    n, big_l = batch.n, batch.n_labels
    denom_mask = np.ones((n, n + big_l), dtype=bool)
    denom_mask[:, :n] = _off_diagonal_mask(n)
    outer = np.full(n, 1.0 / n)
    return _run_engine(
        batch,
        coeff=coeff,
        denom_mask=denom_mask,
        outer=outer,
        include_batch=True,
        include_prototypes=True,
        cfg=cfg,
        use_reg=use_reg,
        lam_raw=lam,
        compute_gradients=compute_gradients,
    )


def loss_reg_matrix_value(batch: ContrastiveBatch, cfg: LossConfig, use_reg: bool | None = None) -> float:
    """Matrix-form value of the regularized loss (unweighted variant).

    Computes the same number as loss_reg via dense masked-softmax algebra on
    the joined pool: an (m, m, L) shared-label tensor yields the pair
    weights, a diagonal mask removes self-similarity, and the gate term is
    assembled from the detached scores. Used to cross-check the per-anchor
    summation; the epsilon guard in the weight normalization perturbs values
    by at most ~1e-12 relative.
    """
    if batch.prototypes is None:
        raise ConfigError("reg loss requires prototypes")
    if cfg.use_alpha_weighting and cfg.alpha > 0:
        raise ConfigError("matrix form covers the unweighted variant only")
    if use_reg is None:
        use_reg = cfg.use_regularizer
    pool = np.vstack([batch.z, batch.prototypes])
    pool_y = np.vstack([batch.y.astype(np.float64), np.eye(batch.n_labels)])
    m = pool.shape[0]
    sim = tempered_cosine_matrix(pool, pool, cfg.tau)
    mask_d = _off_diagonal_mask(m)

    shared = np.einsum("ac,bc->abc", pool_y, pool_y)
    shared *= mask_d[:, :, None]
    norm = shared.sum(axis=1)
    lam = (shared / (norm[:, None, :] + cfg.epsilon)).sum(axis=2)
    lam_norm = lam / pool_y.sum(axis=1)[:, None]

    lse = masked_logsumexp(sim, mask_d)
    log_p = np.where(mask_d, sim - lse[:, None], 0.0)
    sigma = np.where(mask_d, np.exp(sim - lse[:, None]), 0.0)

    per_anchor = -(lam_norm * log_p).sum(axis=1)
    if use_reg:
        gates = np.maximum(-lam_norm + sigma, 0.0) * (lam_norm > 0)
        per_anchor = per_anchor - (gates * sim).sum(axis=1)
    n = batch.n
    return float(per_anchor[:n].sum() / n)


# ---------------------------------------------------------------------------
# logit-based baselines
# ---------------------------------------------------------------------------

_PROB_FLOOR = 1e-12


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _check_logits(logits, y):
    x = as_matrix(logits, "logits")
    yb = np.asarray(y, dtype=np.float64)
    if yb.shape != x.shape:
        raise DomainError(f"labels shape {yb.shape} != logits shape {x.shape}")
    return x, yb


def loss_bce(logits, y) -> LogitLossResult:
    """Mean binary cross-entropy over all (instance, label) cells, with the
    probabilities clamped away from 0 and 1 before the logs."""
    x, yb = _check_logits(logits, y)
    n, big_l = x.shape
    p = _sigmoid(x)
    p_lo = np.maximum(p, _PROB_FLOOR)
    p_hi = np.minimum(p, 1.0 - _PROB_FLOOR)
    value = -(yb * np.log(p_lo) + (1.0 - yb) * np.log(1.0 - p_hi)).sum() / (n * big_l)
    in_lo = p > _PROB_FLOOR
    in_hi = p < 1.0 - _PROB_FLOOR
    d = -(yb * (1.0 - p) * in_lo - (1.0 - yb) * p * in_hi) / (n * big_l)
    return LogitLossResult(loss_value=float(value), d_logits=d)


def loss_asymmetric(logits, y, cfg: LossConfig) -> LogitLossResult:
    """Asymmetric logit loss: the positive and negative terms get separate
    focusing exponents, and a hard margin shifts the probability before the
    negative term so easy negatives drop out entirely.

    With gamma_pos = gamma_neg = 0 and margin = 0 this is exactly loss_bce.
    At margin = 1 every shifted score clips to zero and the positive-label
    logs saturate at the probability floor (a flat, zero-gradient region).
    The clip kink at p = margin takes subgradient 0.
    """
    x, yb = _check_logits(logits, y)
    n, big_l = x.shape
    p = _sigmoid(x)
    s = np.maximum(p - cfg.margin, 0.0)
    s_lo = np.maximum(s, _PROB_FLOOR)
    s_hi = np.minimum(s, 1.0 - _PROB_FLOOR)
    gp, gn = cfg.gamma_pos, cfg.gamma_neg

    pos_mod = (1.0 - s) ** gp
    neg_mod = s ** gn
    value = -(yb * pos_mod * np.log(s_lo) + (1.0 - yb) * neg_mod * np.log(1.0 - s_hi)).sum()
    value /= n * big_l

    # d/ds of each term; modulating-factor derivatives only when the exponent is live
    d_pos = pos_mod * (s > _PROB_FLOOR) / s_lo
    if gp > 0:
        d_pos = d_pos - gp * np.maximum(1.0 - s, _PROB_FLOOR) ** (gp - 1.0) * np.log(s_lo)
    d_neg = -neg_mod * (s < 1.0 - _PROB_FLOOR) / (1.0 - s_hi)
    if gn > 0:
        d_neg = d_neg + gn * np.maximum(s, _PROB_FLOOR) ** (gn - 1.0) * np.log(1.0 - s_hi)
    ds = yb * d_pos + (1.0 - yb) * d_neg
    d = -(ds * (p > cfg.margin) * p * (1.0 - p)) / (n * big_l)
    return LogitLossResult(loss_value=float(value), d_logits=d)


def loss_zlpr(logits, y) -> LogitLossResult:
    """Rank-based loss with a zero threshold: per instance,
    log(1 + sum over positives of exp(-s)) + log(1 + sum over negatives of
    exp(s)), averaged over the batch. Computed via log-sum-exp against an
    implicit zero logit, so it is stable for any score magnitude."""
    x, yb = _check_logits(logits, y)
    n = x.shape[0]
    pos_logits = np.where(yb == 1, -x, -np.inf)
    neg_logits = np.where(yb == 0, x, -np.inf)

    def lse_with_zero(a):
        rowmax = np.maximum(np.max(a, axis=1), 0.0)
        total = np.exp(-rowmax) + np.sum(np.exp(a - rowmax[:, None]), axis=1)
        return rowmax + np.log(total)

    a = lse_with_zero(pos_logits)
    b = lse_with_zero(neg_logits)
    value = float((a + b).sum() / n)
    d = (-np.exp(pos_logits - a[:, None]) + np.exp(neg_logits - b[:, None])) / n
    return LogitLossResult(loss_value=value, d_logits=d)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


def needs_prototypes(loss_id: str) -> bool:
    return loss_id in PROTOTYPE_LOSS_IDS


def is_contrastive(loss_id: str) -> bool:
    return loss_id in CONTRASTIVE_LOSS_IDS


def check_loss_id(loss_id: str) -> str:
    if loss_id not in LOSS_IDS:
        raise ConfigError(
            f"unknown loss id {loss_id!r}; valid ids: {' | '.join(LOSS_IDS)}"
        )
    return loss_id


def contrastive_loss(loss_id: str, batch: ContrastiveBatch, cfg: LossConfig,
                     compute_gradients: bool = True) -> GradientBundle:
    """Evaluate a contrastive loss by string identifier."""
    check_loss_id(loss_id)
    if loss_id == "base":
        return loss_base(batch, cfg, compute_gradients=compute_gradients)
    if loss_id == "proto":
        return loss_proto(batch, cfg, compute_gradients=compute_gradients)
    if loss_id == "mulsupcon":
        return loss_mulsupcon(batch, cfg, compute_gradients=compute_gradients)
    if loss_id == "msc":
        return loss_msc(batch, cfg, compute_gradients=compute_gradients)
    if loss_id == "reg":
        return loss_reg(batch, cfg, compute_gradients=compute_gradients)
    if loss_id == "reg-noreg":
        return loss_reg(batch, cfg, use_reg=False, compute_gradients=compute_gradients)
    if loss_id == "supcon":
        return loss_supcon(batch, cfg, use_reg=False, compute_gradients=compute_gradients)
    if loss_id == "supcon-reg":
        return loss_supcon_reg(batch, cfg, compute_gradients=compute_gradients)
    raise ConfigError(f"{loss_id!r} is not a contrastive loss id")


def logit_loss(loss_id: str, logits, y, cfg: LossConfig) -> LogitLossResult:
    """Evaluate a logit-based loss by string identifier."""
    check_loss_id(loss_id)
    if loss_id == "bce":
        return loss_bce(logits, y)
    if loss_id == "asy":
        return loss_asymmetric(logits, y, cfg)
    if loss_id == "zlpr":
        return loss_zlpr(logits, y)
    raise ConfigError(f"{loss_id!r} is not a logit loss id")
