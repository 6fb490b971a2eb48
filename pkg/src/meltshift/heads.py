"""Regression heads over projected embedding tracks, and their ensemble.

Feature path: each raw embedding track is passed through its own linear
projection to width ``d_proj``; per-variant vectors (cls, mutated-position,
avg-pool) are the concatenation of the projected tracks over the declared
modalities. Heads consume these fused vectors:

* ``head1``: flattened outer product of mutant and wild-type position
  embeddings, mixed back down to width d, then a linear output.
* ``head2``: LayerNorm of the cls difference concatenated with LayerNorm
  of the position difference, then a linear output.
* ``mut_concat``: linear output over the concatenated position embeddings.
* ``mut_lincomb`` / ``cls_lincomb`` / ``avgpool_lincomb``: learned scalar
  mix ``alpha * x_w + beta * x_m`` followed by a linear output.

The ensemble model runs head1 and head2 on one shared projection and
averages their predictions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .data import EmbeddingBundle
from .errors import ConfigError, DataError
from .tape import DEFAULT_LAYERNORM_EPS, Array, Node, Tape, as_vector


class HeadKind(str, enum.Enum):
    HEAD1_OUTER = "head1"
    HEAD2_LNDIFF = "head2"
    MUT_CONCAT = "mut_concat"
    MUT_LINCOMB = "mut_lincomb"
    CLS_LINCOMB = "cls_lincomb"
    AVGPOOL_LINCOMB = "avgpool_lincomb"


LINCOMB_KINDS = (HeadKind.MUT_LINCOMB, HeadKind.CLS_LINCOMB,
                 HeadKind.AVGPOOL_LINCOMB)


class EnsemblePrediction(NamedTuple):
    y1: float
    y2: float
    y_ens: float


# ---------------------------------------------------------------------------
# parameter containers


def _uniform_init(n_out: int, n_in: int, rng: np.random.Generator) -> Array:
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_out, n_in))


@dataclass
class LinearParams:
    weight: Array  # (n_out, n_in)
    bias: Array    # (n_out,)

    @classmethod
    def create(cls, n_out: int, n_in: int, rng: np.random.Generator):
        return cls(_uniform_init(n_out, n_in, rng), np.zeros(n_out))

    def bind(self, tape: Tape, prefix: str) -> tuple[Node, Node]:
        return (tape.leaf(self.weight, f"{prefix}.weight"),
                tape.leaf(self.bias, f"{prefix}.bias"))

    def named(self, prefix: str) -> Iterator[tuple[str, Array]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class LayerNormParams:
    gamma: Array
    beta: Array

    @classmethod
    def create(cls, width: int):
        return cls(np.ones(width), np.zeros(width))

    def bind(self, tape: Tape, prefix: str) -> tuple[Node, Node]:
        return (tape.leaf(self.gamma, f"{prefix}.gamma"),
                tape.leaf(self.beta, f"{prefix}.beta"))

    def named(self, prefix: str) -> Iterator[tuple[str, Array]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


@dataclass
class TrackProjection:
    """One linear layer per declared track role, all mapping d_raw -> d_proj."""

    modalities: tuple[str, ...]
    d_raw: int
    d_proj: int
    layers: dict[str, LinearParams]

    @classmethod
    def create(cls, modalities: tuple[str, ...], d_raw: int, d_proj: int,
               rng: np.random.Generator, *, cls_roles: bool = False,
               pos_roles: bool = False, avg_role: bool = False):
        if d_raw < 1 or d_proj < 1:
            raise ConfigError(f"bad projection widths d_raw={d_raw}, d_proj={d_proj}")
        if not modalities:
            raise ConfigError("projection needs at least one modality")
        roles: list[str] = []
        for m in modalities:
            if cls_roles:
                roles.append(f"{m}_cls")
            if pos_roles:
                roles.append(f"{m}_pos")
        if avg_role:
            roles.append("avg")
        layers = {role: LinearParams.create(d_proj, d_raw, rng)
                  for role in sorted(roles)}
        return cls(tuple(modalities), d_raw, d_proj, layers)

    def named_parameters(self, prefix: str = "proj") -> Iterator[tuple[str, Array]]:
        for role in sorted(self.layers):
            yield from self.layers[role].named(f"{prefix}.{role}")

    def project(self, tape: Tape, bundle: EmbeddingBundle, role: str) -> Node:
        if role not in self.layers:
            raise ConfigError(f"projection has no layer for track role {role!r}")
        if role not in bundle.tracks:
            raise DataError(f"{bundle.variant_id}: missing track {role!r}")
        W, b = self.layers[role].bind(tape, f"proj.{role}")
        x = tape.leaf(bundle.tracks[role])
        return tape.linear(W, x, b)

    def fuse(self, tape: Tape, bundle: EmbeddingBundle, suffix: str) -> Node:
        """Concatenate per-modality projections of the cls or pos tracks."""
        parts = [self.project(tape, bundle, f"{m}_{suffix}")
                 for m in self.modalities]
        return parts[0] if len(parts) == 1 else tape.concat(parts)


def _check_track_pair(bundle_w: EmbeddingBundle, bundle_m: EmbeddingBundle,
                      roles: list[str]) -> None:
    for role in roles:
        in_w = role in bundle_w.tracks
        in_m = role in bundle_m.tracks
        if in_w != in_m:
            missing = bundle_m if in_w else bundle_w
            raise DataError(
                f"track-set mismatch: {missing.variant_id} lacks {role!r}"
            )
        if not in_w:
            raise DataError(
                f"{bundle_w.variant_id}/{bundle_m.variant_id}: missing track {role!r}"
            )


def project_and_fuse(bundle_w: EmbeddingBundle, bundle_m: EmbeddingBundle,
                     proj: TrackProjection) -> tuple[Array, Array, Array, Array]:
    """Fused (cls_w, cls_m, a_w, a_m) vectors; width = n_modalities * d_proj."""
    roles = [f"{m}_{s}" for m in proj.modalities for s in ("cls", "pos")]
    _check_track_pair(bundle_w, bundle_m, roles)
    tape = Tape()
    cls_w = proj.fuse(tape, bundle_w, "cls")
    cls_m = proj.fuse(tape, bundle_m, "cls")
    a_w = proj.fuse(tape, bundle_w, "pos")
    a_m = proj.fuse(tape, bundle_m, "pos")
    return cls_w.value, cls_m.value, a_w.value, a_m.value


# ---------------------------------------------------------------------------
# head parameters


@dataclass
class HeadParams:
    """Learnable parameters of one regression head; fields vary by kind."""

    kind: HeadKind
    out: LinearParams
    mix: LinearParams | None = None        # head1: d^2 -> d stage
    ln_cls: LayerNormParams | None = None  # head2
    ln_pos: LayerNormParams | None = None  # head2
    alpha: Array | None = None             # lincomb heads, shape (1,)
    beta: Array | None = None
    eps: float = DEFAULT_LAYERNORM_EPS

    @classmethod
    def create(cls, kind: HeadKind, width: int, rng: np.random.Generator,
               width_cls: int | None = None, eps: float = DEFAULT_LAYERNORM_EPS):
        if width < 1:
            raise ConfigError(f"head width must be >= 1, got {width}")
        kind = HeadKind(kind)
        if kind == HeadKind.HEAD1_OUTER:
            return cls(kind, mix=LinearParams.create(width, width * width, rng),
                       out=LinearParams.create(1, width, rng), eps=eps)
        if kind == HeadKind.HEAD2_LNDIFF:
            wc = width if width_cls is None else width_cls
            return cls(kind, out=LinearParams.create(1, wc + width, rng),
                       ln_cls=LayerNormParams.create(wc),
                       ln_pos=LayerNormParams.create(width), eps=eps)
        if kind == HeadKind.MUT_CONCAT:
            return cls(kind, out=LinearParams.create(1, 2 * width, rng), eps=eps)
        if kind in LINCOMB_KINDS:
            # difference-style start: alpha=1, beta=-1
            return cls(kind, out=LinearParams.create(1, width, rng),
                       alpha=np.array([1.0]), beta=np.array([-1.0]), eps=eps)
        raise ConfigError(f"unknown head kind {kind!r}")

    def named_parameters(self, prefix: str = "head") -> Iterator[tuple[str, Array]]:
        if self.mix is not None:
            yield from self.mix.named(f"{prefix}.mix")
        if self.ln_cls is not None:
            yield from self.ln_cls.named(f"{prefix}.ln_cls")
        if self.ln_pos is not None:
            yield from self.ln_pos.named(f"{prefix}.ln_pos")
        if self.alpha is not None:
            yield f"{prefix}.alpha", self.alpha
            yield f"{prefix}.beta", self.beta
        yield from self.out.named(f"{prefix}.out")


# ---------------------------------------------------------------------------
# head forward passes (tape level)


def head1_forward(tape: Tape, a_w: Node, a_m: Node, params: HeadParams,
                  prefix: str = "head") -> Node:
    """Outer-product head: N1(mix(flatten(a_m (x) a_w)))."""
    if params.kind != HeadKind.HEAD1_OUTER or params.mix is None:
        raise ConfigError(f"head1_forward needs HEAD1_OUTER params, got {params.kind}")
    flat = tape.outer_flatten(a_m, a_w)
    Wm, bm = params.mix.bind(tape, f"{prefix}.mix")
    hidden = tape.linear(Wm, flat, bm)
    Wo, bo = params.out.bind(tape, f"{prefix}.out")
    return tape.linear(Wo, hidden, bo)


def head2_forward(tape: Tape, cls_w: Node, cls_m: Node, a_w: Node, a_m: Node,
                  params: HeadParams, prefix: str = "head") -> Node:
    """Difference head: N2(LN(cls_w - cls_m) ++ LN(a_w - a_m))."""
    if params.kind != HeadKind.HEAD2_LNDIFF or params.ln_cls is None:
        raise ConfigError(f"head2_forward needs HEAD2_LNDIFF params, got {params.kind}")
    gc, bc = params.ln_cls.bind(tape, f"{prefix}.ln_cls")
    gp, bp = params.ln_pos.bind(tape, f"{prefix}.ln_pos")
    norm_cls = tape.layernorm(tape.sub(cls_w, cls_m), gc, bc, params.eps)
    norm_pos = tape.layernorm(tape.sub(a_w, a_m), gp, bp, params.eps)
    feature = tape.concat([norm_cls, norm_pos])
    Wo, bo = params.out.bind(tape, f"{prefix}.out")
    return tape.linear(Wo, feature, bo)


def mut_concat_forward(tape: Tape, a_w: Node, a_m: Node, params: HeadParams,
                       prefix: str = "head") -> Node:
    if params.kind != HeadKind.MUT_CONCAT:
        raise ConfigError(f"mut_concat_forward needs MUT_CONCAT params, got {params.kind}")
    Wo, bo = params.out.bind(tape, f"{prefix}.out")
    return tape.linear(Wo, tape.concat([a_w, a_m]), bo)


def lincomb_forward(tape: Tape, x_w: Node, x_m: Node, params: HeadParams,
                    prefix: str = "head") -> Node:
    if params.kind not in LINCOMB_KINDS or params.alpha is None:
        raise ConfigError(f"lincomb_forward needs a lincomb head, got {params.kind}")
    alpha = tape.leaf(params.alpha, f"{prefix}.alpha")
    beta = tape.leaf(params.beta, f"{prefix}.beta")
    mixed = tape.add(tape.scale(alpha, x_w), tape.scale(beta, x_m))
    Wo, bo = params.out.bind(tape, f"{prefix}.out")
    return tape.linear(Wo, mixed, bo)


# ---------------------------------------------------------------------------
# float-level prediction API


def head1_predict(a_w, a_m, params: HeadParams) -> float:
    tape = Tape()
    y = head1_forward(tape, tape.leaf(as_vector(a_w, "a_w")),
                      tape.leaf(as_vector(a_m, "a_m")), params)
    return float(y.value[0])


def head2_predict(cls_w, cls_m, a_w, a_m, params: HeadParams) -> float:
    tape = Tape()
    y = head2_forward(tape,
                      tape.leaf(as_vector(cls_w, "cls_w")),
                      tape.leaf(as_vector(cls_m, "cls_m")),
                      tape.leaf(as_vector(a_w, "a_w")),
                      tape.leaf(as_vector(a_m, "a_m")), params)
    return float(y.value[0])


def head2_features(cls_w, cls_m, a_w, a_m,
                   params: HeadParams) -> tuple[Array, Array, Array]:
    """Intermediates of head2: (cls difference, pos difference, pre-linear feature)."""
    tape = Tape()
    dcls = tape.sub(tape.leaf(as_vector(cls_w, "cls_w")),
                    tape.leaf(as_vector(cls_m, "cls_m")))
    dpos = tape.sub(tape.leaf(as_vector(a_w, "a_w")),
                    tape.leaf(as_vector(a_m, "a_m")))
    gc, bc = params.ln_cls.bind(tape, "head.ln_cls")
    gp, bp = params.ln_pos.bind(tape, "head.ln_pos")
    feature = tape.concat([tape.layernorm(dcls, gc, bc, params.eps),
                           tape.layernorm(dpos, gp, bp, params.eps)])
    return dcls.value, dpos.value, feature.value


def ablation_head_predict(kind: HeadKind, inputs, params: HeadParams) -> float:
    """Predict with one ablation head; ``inputs`` is (x_w, x_m) for its track."""
    kind = HeadKind(kind)
    if params.kind != kind:
        raise ConfigError(f"params are {params.kind}, requested {kind}")
    x_w, x_m = (as_vector(v, n) for v, n in zip(inputs, ("x_w", "x_m")))
    tape = Tape()
    nodes = tape.leaf(x_w), tape.leaf(x_m)
    if kind == HeadKind.MUT_CONCAT:
        y = mut_concat_forward(tape, *nodes, params)
    elif kind in LINCOMB_KINDS:
        y = lincomb_forward(tape, *nodes, params)
    else:
        raise ConfigError(f"{kind} is not an ablation head")
    return float(y.value[0])


# ---------------------------------------------------------------------------
# models


def _batch_mean(tape: Tape, items: list[Node]) -> Node:
    return tape.mean_scalars(items)


@dataclass
class EnsembleModel:
    """Shared projection feeding head1 and head2; prediction is their mean."""

    projection: TrackProjection
    head1: HeadParams
    head2: HeadParams
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    kind_name = "ensemble"

    def named_parameters(self) -> Iterator[tuple[str, Array]]:
        yield from self.projection.named_parameters("proj")
        yield from self.head1.named_parameters("head1")
        yield from self.head2.named_parameters("head2")

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.named_parameters())

    def forward_nodes(self, tape: Tape, bundle_w: EmbeddingBundle,
                      bundle_m: EmbeddingBundle) -> tuple[Node, Node, Node]:
        roles = [f"{m}_{s}" for m in self.projection.modalities
                 for s in ("cls", "pos")]
        _check_track_pair(bundle_w, bundle_m, roles)
        cls_w = self.projection.fuse(tape, bundle_w, "cls")
        cls_m = self.projection.fuse(tape, bundle_m, "cls")
        a_w = self.projection.fuse(tape, bundle_w, "pos")
        a_m = self.projection.fuse(tape, bundle_m, "pos")
        y1 = head1_forward(tape, a_w, a_m, self.head1, "head1")
        y2 = head2_forward(tape, cls_w, cls_m, a_w, a_m, self.head2, "head2")
        y_ens = tape.const_scale(0.5, tape.add(y1, y2))
        return y1, y2, y_ens

    def predict(self, bundle_w: EmbeddingBundle,
                bundle_m: EmbeddingBundle) -> EnsemblePrediction:
        y1, y2, y_ens = self.forward_nodes(Tape(), bundle_w, bundle_m)
        return EnsemblePrediction(float(y1.value[0]), float(y2.value[0]),
                                  float(y_ens.value[0]))

    def batch_loss(self, tape: Tape, samples) -> tuple[Node, dict[str, float]]:
        """Mean per-head MSE terms plus the halved ensemble term.

        ``samples`` is a list of (bundle_w, bundle_m, label) triples.
        """
        if not samples:
            raise ConfigError("batch_loss: empty batch")
        items1, items2, items_e = [], [], []
        for bundle_w, bundle_m, label in samples:
            y1, y2, y_ens = self.forward_nodes(tape, bundle_w, bundle_m)
            target = np.array([float(label)])
            items1.append(tape.mse(y1, target))
            items2.append(tape.mse(y2, target))
            items_e.append(tape.const_scale(0.5, tape.mse(y_ens, target)))
        l1 = _batch_mean(tape, items1)
        l2 = _batch_mean(tape, items2)
        le = _batch_mean(tape, items_e)
        w1, w2, we = self.loss_weights
        total = tape.add(tape.add(tape.const_scale(w1, l1),
                                  tape.const_scale(w2, l2)),
                         tape.const_scale(we, le))
        components = {
            "head1": float(l1.value[0]),
            "head2": float(l2.value[0]),
            "ensemble": float(le.value[0]),
            "total": float(total.value[0]),
        }
        return total, components


@dataclass
class SingleHeadModel:
    """One projection plus one head; used for the ablation architectures."""

    projection: TrackProjection
    head: HeadParams
    seed: int = 0

    @property
    def kind_name(self) -> str:
        return self.head.kind.value

    def named_parameters(self) -> Iterator[tuple[str, Array]]:
        yield from self.projection.named_parameters("proj")
        yield from self.head.named_parameters("head")

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.named_parameters())

    def _inputs(self, tape: Tape, bundle_w: EmbeddingBundle,
                bundle_m: EmbeddingBundle) -> dict[str, Node]:
        kind = self.head.kind
        proj = self.projection
        if kind == HeadKind.AVGPOOL_LINCOMB:
            _check_track_pair(bundle_w, bundle_m, ["avg"])
            return {"x_w": proj.project(tape, bundle_w, "avg"),
                    "x_m": proj.project(tape, bundle_m, "avg")}
        if kind == HeadKind.CLS_LINCOMB:
            roles = [f"{m}_cls" for m in proj.modalities]
            _check_track_pair(bundle_w, bundle_m, roles)
            return {"x_w": proj.fuse(tape, bundle_w, "cls"),
                    "x_m": proj.fuse(tape, bundle_m, "cls")}
        if kind in (HeadKind.HEAD1_OUTER, HeadKind.MUT_CONCAT,
                    HeadKind.MUT_LINCOMB):
            roles = [f"{m}_pos" for m in proj.modalities]
            _check_track_pair(bundle_w, bundle_m, roles)
            return {"x_w": proj.fuse(tape, bundle_w, "pos"),
                    "x_m": proj.fuse(tape, bundle_m, "pos")}
        # head2 needs both cls and pos tracks
        roles = [f"{m}_{s}" for m in proj.modalities for s in ("cls", "pos")]
        _check_track_pair(bundle_w, bundle_m, roles)
        return {"cls_w": proj.fuse(tape, bundle_w, "cls"),
                "cls_m": proj.fuse(tape, bundle_m, "cls"),
                "x_w": proj.fuse(tape, bundle_w, "pos"),
                "x_m": proj.fuse(tape, bundle_m, "pos")}

    def forward_node(self, tape: Tape, bundle_w: EmbeddingBundle,
                     bundle_m: EmbeddingBundle) -> Node:
        kind = self.head.kind
        nodes = self._inputs(tape, bundle_w, bundle_m)
        if kind == HeadKind.HEAD1_OUTER:
            return head1_forward(tape, nodes["x_w"], nodes["x_m"], self.head)
        if kind == HeadKind.HEAD2_LNDIFF:
            return head2_forward(tape, nodes["cls_w"], nodes["cls_m"],
                                 nodes["x_w"], nodes["x_m"], self.head)
        if kind == HeadKind.MUT_CONCAT:
            return mut_concat_forward(tape, nodes["x_w"], nodes["x_m"], self.head)
        return lincomb_forward(tape, nodes["x_w"], nodes["x_m"], self.head)

    def predict(self, bundle_w: EmbeddingBundle,
                bundle_m: EmbeddingBundle) -> float:
        y = self.forward_node(Tape(), bundle_w, bundle_m)
        return float(y.value[0])

    def batch_loss(self, tape: Tape, samples) -> tuple[Node, dict[str, float]]:
        if not samples:
            raise ConfigError("batch_loss: empty batch")
        items = []
        for bundle_w, bundle_m, label in samples:
            y = self.forward_node(tape, bundle_w, bundle_m)
            items.append(tape.mse(y, np.array([float(label)])))
        total = _batch_mean(tape, items)
        return total, {"head": float(total.value[0]),
                       "total": float(total.value[0])}


Model = EnsembleModel | SingleHeadModel


def ensemble_predict(bundle_w: EmbeddingBundle, bundle_m: EmbeddingBundle,
                     model: EnsembleModel) -> EnsemblePrediction:
    return model.predict(bundle_w, bundle_m)


# ---------------------------------------------------------------------------
# factories


def build_ensemble(d_raw: int, d_proj: int, seed: int,
                   modalities: tuple[str, ...] = ("seq",),
                   loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                   ln_eps: float = DEFAULT_LAYERNORM_EPS) -> EnsembleModel:
    rng = np.random.default_rng(seed)
    proj = TrackProjection.create(modalities, d_raw, d_proj, rng,
                                  cls_roles=True, pos_roles=True)
    width = len(modalities) * d_proj
    head1 = HeadParams.create(HeadKind.HEAD1_OUTER, width, rng, eps=ln_eps)
    head2 = HeadParams.create(HeadKind.HEAD2_LNDIFF, width, rng,
                              width_cls=width, eps=ln_eps)
    return EnsembleModel(proj, head1, head2, tuple(loss_weights), seed=seed)


def build_single_head(kind: HeadKind, d_raw: int, d_proj: int, seed: int,
                      modalities: tuple[str, ...] = ("seq",),
                      ln_eps: float = DEFAULT_LAYERNORM_EPS) -> SingleHeadModel:
    kind = HeadKind(kind)
    rng = np.random.default_rng(seed)
    needs_cls = kind in (HeadKind.HEAD2_LNDIFF, HeadKind.CLS_LINCOMB)
    needs_pos = kind in (HeadKind.HEAD1_OUTER, HeadKind.HEAD2_LNDIFF,
                         HeadKind.MUT_CONCAT, HeadKind.MUT_LINCOMB)
    needs_avg = kind == HeadKind.AVGPOOL_LINCOMB
    proj = TrackProjection.create(modalities, d_raw, d_proj, rng,
                                  cls_roles=needs_cls, pos_roles=needs_pos,
                                  avg_role=needs_avg)
    width = d_proj if needs_avg else len(modalities) * d_proj
    head = HeadParams.create(kind, width, rng, width_cls=width, eps=ln_eps)
    return SingleHeadModel(proj, head, seed=seed)


def build_model(kind_name: str, d_raw: int, d_proj: int, seed: int,
                modalities: tuple[str, ...] = ("seq",),
                loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                ln_eps: float = DEFAULT_LAYERNORM_EPS) -> Model:
    """Build by name: ``ensemble`` or any :class:`HeadKind` value."""
    if kind_name == "ensemble":
        return build_ensemble(d_raw, d_proj, seed, modalities, loss_weights, ln_eps)
    return build_single_head(HeadKind(kind_name), d_raw, d_proj, seed,
                             modalities, ln_eps)
