"""Actor-set models over one or more feature branches.

A branch (static pose, dynamic rgb, dynamic flow, ...) supplies one feature
vector per actor. A branch model embeds those vectors, optionally adds
position codes for the actor box centers, runs the transformer encoder over
the actor set, and reads out per-actor action logits plus, after max-pooling
the set, one group-activity logit row.

Branches can be fused three ways: early by summing embeddings, early by
concatenating embeddings behind a learned projection, or late by mixing the
per-branch class probabilities with fixed weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .posenc import apply_pe
from .tensor import (
    MODE_INFER,
    Tensor,
    add,
    concat_last_dim,
    matmul,
    max_over_set,
    mul,
    reshape,
    softmax_rows,
)
from .transformer import EncoderConfig, EncoderWeights, encode, xavier_uniform

PE_POST_EMBED = "post-embed"
PE_PRE_EMBED = "pre-embed"

EARLY_PE_AFTER_FUSION = "after-fusion"
EARLY_PE_PER_BRANCH = "per-branch"

FUSION_NONE = "none"
FUSION_EARLY_SUM = "early-sum"
FUSION_EARLY_CONCAT = "early-concat"
FUSION_LATE = "late"
FUSION_MODES = (FUSION_NONE, FUSION_EARLY_SUM, FUSION_EARLY_CONCAT, FUSION_LATE)

# Default mixing weights for late fusion, before normalisation: the static
# branch counts double.
DEFAULT_LATE_WEIGHTS = {"static": 2.0, "dynamic-rgb": 1.0, "dynamic-flow": 1.0}


@dataclass(frozen=True)
class BranchConfig:
    feature_dim: int
    num_actions: int
    num_activities: int
    d_model: int = 128
    num_heads: int = 1
    num_layers: int = 1
    d_ff: int = 256
    dropout: float = 0.1
    use_pe: bool = True
    pe_scale: float = 100.0
    pe_stage: str = PE_POST_EMBED
    use_encoder: bool = True

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ConfigError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.num_actions < 2 or self.num_activities < 2:
            raise ConfigError(
                f"need at least 2 actions and 2 activities, got {self.num_actions}/{self.num_activities}"
            )
        if self.pe_stage not in (PE_POST_EMBED, PE_PRE_EMBED):
            raise ConfigError(f"unknown pe_stage {self.pe_stage!r}")
        if self.use_pe and self.pe_stage == PE_POST_EMBED and self.d_model % 4 != 0:
            raise ConfigError(f"d_model must be divisible by 4 for position codes, got {self.d_model}")
        if self.use_pe and self.pe_stage == PE_PRE_EMBED and self.feature_dim % 4 != 0:
            raise ConfigError(
                f"feature_dim must be divisible by 4 for pre-embed position codes, got {self.feature_dim}"
            )
        self.encoder_config()  # validates d_model/num_heads/num_layers/d_ff/dropout

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d_model, self.num_heads, self.num_layers, self.d_ff, self.dropout)


@dataclass
class BranchInput:
    """One scene as seen by one branch: per-actor features plus box centers."""

    features: np.ndarray  # (n, feature_dim)
    centers: np.ndarray  # (n, 2), coords in [0, 1]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be (n, f), got {self.features.shape}")
        if self.centers.shape != (self.features.shape[0], 2):
            raise ShapeError(
                f"centers must be ({self.features.shape[0]}, 2), got {self.centers.shape}"
            )
        if self.features.shape[0] < 1:
            raise DataError("a scene needs at least one actor")


@dataclass
class Prediction:
    """Model outputs for one scene.

    action_logits is (n, num_actions) and activity_logits is (num_activities,).
    Under late fusion both hold mixed post-softmax probabilities instead of raw
    logits; argmax semantics are unchanged. attention is an AttentionRecord,
    or a dict keyed by branch under late fusion, or None when not recorded.
    """

    action_logits: Tensor
    activity_logits: Tensor
    attention: object = None


def predict(pred: Prediction):
    """(group_activity_id, per-actor action ids); ties go to the lowest id."""
    group = int(np.argmax(pred.activity_logits.data))
    actions = np.argmax(pred.action_logits.data, axis=1)
    return group, actions


def embed(features: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine projection of per-actor features into the model width."""
    return add(matmul(features, w), b)


class BranchWeights:
    """Weights of a single-branch model.

    Draw order from the init rng: embedding matrix, encoder layers, action
    classifier, activity classifier. Classifier heads are bare matrices.
    """

    def __init__(self, cfg: BranchConfig, rng):
        self.cfg = cfg
        self.embed_w = Tensor(xavier_uniform(rng, cfg.feature_dim, cfg.d_model), requires_grad=True)
        self.embed_b = Tensor(np.zeros(cfg.d_model), requires_grad=True)
        self.encoder = EncoderWeights(cfg.encoder_config(), rng) if cfg.use_encoder else None
        self.action_w = Tensor(xavier_uniform(rng, cfg.d_model, cfg.num_actions), requires_grad=True)
        self.activity_w = Tensor(xavier_uniform(rng, cfg.d_model, cfg.num_activities), requires_grad=True)

    def parameters(self):
        out = [("embed_w", self.embed_w), ("embed_b", self.embed_b)]
        if self.encoder is not None:
            out += [(f"enc/{name}", t) for name, t in self.encoder.parameters()]
        out += [("action_w", self.action_w), ("activity_w", self.activity_w)]
        return out


def _heads(encoded: Tensor, action_w: Tensor, activity_w: Tensor):
    action_logits = matmul(encoded, action_w)
    pooled = reshape(max_over_set(encoded), (1, encoded.shape[1]))
    activity_logits = reshape(matmul(pooled, activity_w), (activity_w.shape[1],))
    return action_logits, activity_logits


def forward_branch(inp: BranchInput, w: BranchWeights, mode=MODE_INFER, rng=None,
                   record_attention=False) -> Prediction:
    cfg = w.cfg
    if inp.features.shape[1] != cfg.feature_dim:
        raise ShapeError(
            f"branch expects feature_dim {cfg.feature_dim}, got {inp.features.shape[1]}"
        )
    x = Tensor(inp.features)
    if cfg.use_pe and cfg.pe_stage == PE_PRE_EMBED:
        x = apply_pe(x, inp.centers, cfg.pe_scale)
    x = embed(x, w.embed_w, w.embed_b)
    if cfg.use_pe and cfg.pe_stage == PE_POST_EMBED:
        x = apply_pe(x, inp.centers, cfg.pe_scale)
    rec = None
    if w.encoder is not None:
        x, rec = encode(x, w.encoder, mode, rng, record_attention)
    action_logits, activity_logits = _heads(x, w.action_w, w.activity_w)
    return Prediction(action_logits, activity_logits, rec)


class BranchModel:
    """Single-branch model bound to the branch name it reads from."""

    kind = "branch"

    def __init__(self, branch: str, cfg: BranchConfig, rng):
        self.branch = branch
        self.cfg = cfg
        self.weights = BranchWeights(cfg, rng)

    def forward(self, inputs: Mapping[str, BranchInput], mode=MODE_INFER, rng=None,
                record_attention=False) -> Prediction:
        if self.branch not in inputs:
            raise DataError(f"scene has no branch {self.branch!r}, only {sorted(inputs)}")
        return forward_branch(inputs[self.branch], self.weights, mode, rng, record_attention)

    def parameters(self):
        return self.weights.parameters()


class EarlyFusionModel:
    """Sum or concatenate per-branch embeddings, then run one encoder.

    Branch order is the sorted branch-name order everywhere (init draws,
    concatenation, parameter listing). Position codes are added either once
    after fusing ('after-fusion', default) or to every branch embedding
    ('per-branch').
    """

    def __init__(self, combine: str, feature_dims: Mapping[str, int], cfg: BranchConfig,
                 rng, early_pe: str = EARLY_PE_AFTER_FUSION):
        if combine not in ("sum", "concat"):
            raise ConfigError(f"combine must be 'sum' or 'concat', got {combine!r}")
        if early_pe not in (EARLY_PE_AFTER_FUSION, EARLY_PE_PER_BRANCH):
            raise ConfigError(f"unknown early_pe {early_pe!r}")
        if len(feature_dims) < 2:
            raise ConfigError(f"early fusion needs at least 2 branches, got {sorted(feature_dims)}")
        if cfg.pe_stage != PE_POST_EMBED:
            raise ConfigError("early fusion applies position codes at model width only")
        self.combine = combine
        self.early_pe = early_pe
        self.branches = sorted(feature_dims)
        self.feature_dims = {b: int(feature_dims[b]) for b in self.branches}
        self.cfg = cfg
        self.embeds = {}
        for b in self.branches:
            w = Tensor(xavier_uniform(rng, self.feature_dims[b], cfg.d_model), requires_grad=True)
            bias = Tensor(np.zeros(cfg.d_model), requires_grad=True)
            self.embeds[b] = (w, bias)
        if combine == "concat":
            self.proj = Tensor(
                xavier_uniform(rng, cfg.d_model * len(self.branches), cfg.d_model),
                requires_grad=True,
            )
        else:
            self.proj = None
        self.encoder = EncoderWeights(cfg.encoder_config(), rng) if cfg.use_encoder else None
        self.action_w = Tensor(xavier_uniform(rng, cfg.d_model, cfg.num_actions), requires_grad=True)
        self.activity_w = Tensor(xavier_uniform(rng, cfg.d_model, cfg.num_activities), requires_grad=True)

    @property
    def kind(self):
        return "early-" + self.combine

    def forward(self, inputs: Mapping[str, BranchInput], mode=MODE_INFER, rng=None,
                record_attention=False) -> Prediction:
        missing = [b for b in self.branches if b not in inputs]
        if missing:
            raise DataError(f"scene is missing branches {missing}")
        first = inputs[self.branches[0]]
        n = first.features.shape[0]
        embedded = []
        for b in self.branches:
            inp = inputs[b]
            if inp.features.shape[0] != n:
                raise ShapeError(f"branch {b!r} has {inp.features.shape[0]} actors, expected {n}")
            if inp.features.shape[1] != self.feature_dims[b]:
                raise ShapeError(
                    f"branch {b!r} expects feature_dim {self.feature_dims[b]}, got {inp.features.shape[1]}"
                )
            w, bias = self.embeds[b]
            e = embed(Tensor(inp.features), w, bias)
            if self.cfg.use_pe and self.early_pe == EARLY_PE_PER_BRANCH:
                e = apply_pe(e, inp.centers, self.cfg.pe_scale)
            embedded.append(e)
        if self.combine == "sum":
            x = embedded[0]
            for e in embedded[1:]:
                x = add(x, e)
        else:
            x = matmul(concat_last_dim(embedded), self.proj)
        if self.cfg.use_pe and self.early_pe == EARLY_PE_AFTER_FUSION:
            x = apply_pe(x, first.centers, self.cfg.pe_scale)
        rec = None
        if self.encoder is not None:
            x, rec = encode(x, self.encoder, mode, rng, record_attention)
        action_logits, activity_logits = _heads(x, self.action_w, self.activity_w)
        return Prediction(action_logits, activity_logits, rec)

    def parameters(self):
        out = []
        for b in self.branches:
            w, bias = self.embeds[b]
            out += [(f"embed/{b}/w", w), (f"embed/{b}/b", bias)]
        if self.proj is not None:
            out.append(("proj", self.proj))
        if self.encoder is not None:
            out += [(f"enc/{name}", t) for name, t in self.encoder.parameters()]
        out += [("action_w", self.action_w), ("activity_w", self.activity_w)]
        return out


class LateFusionModel:
    """Fixed-weight mixture of per-branch class probabilities.

    Each branch keeps its own fully trained model; this wrapper softmaxes
    every branch's logits and sums them with the normalised mixing weights.
    """

    kind = "late"

    def __init__(self, models: Mapping[str, BranchModel], weights: Mapping[str, float] | None = None):
        if len(models) < 2:
            raise ConfigError(f"late fusion needs at least 2 branches, got {sorted(models)}")
        self.branches = sorted(models)
        self.models = {b: models[b] for b in self.branches}
        ref = self.models[self.branches[0]].cfg
        for b in self.branches[1:]:
            cfg = self.models[b].cfg
            if (cfg.num_actions, cfg.num_activities) != (ref.num_actions, ref.num_activities):
                raise ConfigError(f"branch {b!r} disagrees on class counts")
        raw = dict(DEFAULT_LATE_WEIGHTS) if weights is None else dict(weights)
        for b in self.branches:
            if b not in raw:
                raise ConfigError(f"no fusion weight for branch {b!r}")
            if raw[b] <= 0:
                raise ConfigError(f"fusion weight for {b!r} must be positive, got {raw[b]}")
        total = sum(raw[b] for b in self.branches)
        self.weights = {b: raw[b] / total for b in self.branches}

    def forward(self, inputs: Mapping[str, BranchInput], mode=MODE_INFER, rng=None,
                record_attention=False) -> Prediction:
        action_mix = None
        activity_mix = None
        recs = {}
        for b in self.branches:
            pred = self.models[b].forward(inputs, mode, rng, record_attention)
            wgt = self.weights[b]
            act = mul(softmax_rows(pred.action_logits), wgt)
            g = pred.activity_logits
            grp = mul(softmax_rows(reshape(g, (1, g.shape[0]))), wgt)
            action_mix = act if action_mix is None else add(action_mix, act)
            activity_mix = grp if activity_mix is None else add(activity_mix, grp)
            if record_attention:
                recs[b] = pred.attention
        activity_mix = reshape(activity_mix, (activity_mix.shape[1],))
        return Prediction(action_mix, activity_mix, recs if record_attention else None)

    def parameters(self):
        out = []
        for b in self.branches:
            out += [(f"branch/{b}/{name}", t) for name, t in self.models[b].parameters()]
        return out


def branch_inputs(scene) -> dict:
    """View a generated scene as the per-branch inputs the models consume."""
    return {name: BranchInput(feats, scene.centers) for name, feats in scene.features.items()}
