"""Pruning plans: cluster channels, pick representatives, rewrite the model.

A plan records, per layer, which channels form a similarity cluster, which
member survives (the one with the largest |gamma|), and how removed members
are compensated: each removed channel's next-layer kernel slice is added
into its representative's slice before the slice is dropped, so removing a
duplicate channel leaves the next layer's pre-BN output unchanged.

FLOPs accounting follows fixed conventions (one multiply-add counts as two
FLOPs, non-conv layers counted too); the constants are embedded in every
report so the arithmetic stays auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment, Linkage, hierarchical_cluster
from .distance import bn_channel_stats, build_distance_matrix, normalize
from .tensor import (
    ActivationKind,
    BnParams,
    ConvKernel,
    DenseHead,
    LayerBlock,
    ModelGraph,
)

PLAN_VERSION = "1"

# One tensor multiply-add costs 2 FLOPs; inference-time BN is a scale plus a
# shift per activation; pooling touches each input element once.
FLOPS_CONVENTIONS = {
    "conv_flops_per_multiply_add": 2,
    "bn_flops_per_activation": 2,
    "relu_flops_per_activation": 1,
    "sigmoid_flops_per_activation": 4,
    "identity_flops_per_activation": 0,
    "pool_flops_per_input_element": 1,
    "dense_flops_per_multiply_add": 2,
}

_ACT_FLOPS = {
    ActivationKind.RELU: 1,
    ActivationKind.SIGMOID: 4,
    ActivationKind.IDENTITY: 0,
}


class PlanMismatchError(ValueError):
    """Plan does not fit the model it is being applied to."""


@dataclass(frozen=True)
class PruneConfig:
    """Knobs for plan construction; one global threshold drives everything."""

    threshold: float
    linkage: Linkage = Linkage.COMPLETE
    min_channels: int = 1
    compensate: bool = True
    freeze_final: bool = False  # exempt the block feeding the head

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.min_channels < 1:
            raise ValueError(f"min_channels must be >= 1, got {self.min_channels}")


@dataclass(frozen=True)
class LayerPlan:
    """Clustering outcome for one layer."""

    clusters: ClusterAssignment
    representatives: tuple[int, ...]
    removed: tuple[int, ...]
    compensation: dict[int, int]
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "representatives", tuple(self.representatives))
        object.__setattr__(self, "removed", tuple(sorted(self.removed)))
        groups = self.clusters.clusters()
        if len(self.representatives) != len(groups):
            raise ValueError("one representative required per cluster")
        for rep, members in zip(self.representatives, groups):
            if rep not in members:
                raise ValueError(f"representative {rep} not a member of its cluster")
        all_channels = set(range(self.clusters.num_channels))
        reps = set(self.representatives)
        if reps | set(self.removed) != all_channels or reps & set(self.removed):
            raise ValueError("representatives and removed must partition the channels")
        for ch, rep in self.compensation.items():
            if ch not in self.removed or rep not in reps:
                raise ValueError(
                    f"compensation {ch} -> {rep} must map a removed channel "
                    "to a representative"
                )

    @property
    def retained(self) -> tuple[int, ...]:
        removed = set(self.removed)
        return tuple(c for c in range(self.clusters.num_channels) if c not in removed)


@dataclass(frozen=True)
class PruningPlan:
    threshold: float
    linkage: Linkage
    layers: tuple[LayerPlan, ...]
    version: str = PLAN_VERSION

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def total_removed(self) -> int:
        return sum(len(layer.removed) for layer in self.layers)

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "threshold": self.threshold,
            "linkage": self.linkage.value,
            "layers": [
                {
                    "clusters": layer.clusters.clusters(),
                    "representatives": list(layer.representatives),
                    "removed": list(layer.removed),
                    "compensation": {
                        str(ch): rep for ch, rep in sorted(layer.compensation.items())
                    },
                    "degenerate": layer.degenerate,
                }
                for layer in self.layers
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PruningPlan":
        doc = json.loads(text)
        layers = []
        for entry in doc["layers"]:
            clusters = entry["clusters"]
            num_channels = sum(len(c) for c in clusters)
            layers.append(
                LayerPlan(
                    clusters=ClusterAssignment.from_clusters(clusters, num_channels),
                    representatives=tuple(entry["representatives"]),
                    removed=tuple(entry["removed"]),
                    compensation={
                        int(ch): rep for ch, rep in entry["compensation"].items()
                    },
                    degenerate=bool(entry.get("degenerate", False)),
                )
            )
        return cls(
            threshold=doc["threshold"],
            linkage=Linkage(doc["linkage"]),
            layers=tuple(layers),
            version=doc.get("version", PLAN_VERSION),
        )


def identity_layer_plan(num_channels: int, degenerate: bool = False) -> LayerPlan:
    """All-singleton plan that removes nothing."""
    assignment = ClusterAssignment(np.arange(num_channels), num_channels)
    return LayerPlan(
        clusters=assignment,
        representatives=tuple(range(num_channels)),
        removed=(),
        compensation={},
        degenerate=degenerate,
    )


def select_representative(cluster, gammas) -> int:
    """Member with the largest |gamma|; ties go to the smallest index."""
    members = sorted(cluster)
    if not members:
        raise ValueError("cluster must not be empty")
    gammas = np.asarray(gammas, dtype=np.float64)
    best = members[0]
    for ch in members[1:]:
        if abs(gammas[ch]) > abs(gammas[best]):
            best = ch
    return best


def _plan_for_layer(block: LayerBlock, config: PruneConfig) -> LayerPlan:
    stats = bn_channel_stats(block.bn)
    matrix = normalize(build_distance_matrix(stats))
    num_channels = len(stats)
    if matrix.degenerate:
        return identity_layer_plan(num_channels, degenerate=True)

    assignment = hierarchical_cluster(matrix, config.threshold, config.linkage)
    groups = assignment.clusters()
    gammas = block.bn.gamma
    floor = min(config.min_channels, num_channels)

    if len(groups) < floor:
        # Split the highest-|gamma| would-be-removed channels back out into
        # singletons until the layer keeps at least ``floor`` channels.
        reps = {id(g): select_representative(g, gammas) for g in groups}
        removable = sorted(
            (ch for g in groups for ch in g if ch != reps[id(g)]),
            key=lambda ch: (-abs(float(gammas[ch])), ch),
        )
        for ch in removable[: floor - len(groups)]:
            for g in groups:
                if ch in g:
                    g.remove(ch)
                    break
            groups.append([ch])
        assignment = ClusterAssignment.from_clusters(groups, num_channels)
        groups = assignment.clusters()

    representatives = tuple(select_representative(g, gammas) for g in groups)
    removed = tuple(sorted(set(range(num_channels)) - set(representatives)))
    compensation: dict[int, int] = {}
    if config.compensate:
        for rep, members in zip(representatives, groups):
            compensation.update({ch: rep for ch in members if ch != rep})
    return LayerPlan(
        clusters=assignment,
        representatives=representatives,
        removed=removed,
        compensation=compensation,
    )


def build_pruning_plan(model: ModelGraph, config: PruneConfig) -> PruningPlan:
    """Cluster every layer's channels from its BN statistics and decide
    removals.

    Degenerate layers (all pairwise distances equal, which includes any
    layer with fewer than three channels) are left unpruned.  With
    ``freeze_final`` the last block is exempted as well.
    """
    layers = []
    last = len(model.blocks) - 1
    for idx, block in enumerate(model.blocks):
        if config.freeze_final and idx == last:
            layers.append(identity_layer_plan(block.out_channels))
        else:
            layers.append(_plan_for_layer(block, config))
    return PruningPlan(
        threshold=config.threshold, linkage=config.linkage, layers=tuple(layers)
    )


def _check_plan_fits(model: ModelGraph, plan: PruningPlan):
    if len(plan.layers) != len(model.blocks):
        raise PlanMismatchError(
            f"plan covers {len(plan.layers)} layers, model has {len(model.blocks)}"
        )
    for idx, (layer, block) in enumerate(zip(plan.layers, model.blocks)):
        if layer.clusters.num_channels != block.out_channels:
            raise PlanMismatchError(
                f"layer {idx}: plan sized for {layer.clusters.num_channels} "
                f"channels, block has {block.out_channels}"
            )


def _compensate_inputs(weights: np.ndarray, layer: LayerPlan) -> np.ndarray:
    """Fold removed input slices into their representatives, then drop them.

    ``weights`` is (out, in, kh, kw); the previous layer's plan governs the
    ``in`` axis.
    """
    out = np.array(weights, dtype=weights.dtype)
    for ch, rep in sorted(layer.compensation.items()):
        out[:, rep] += out[:, ch]
    return out[:, list(layer.retained)]


def _compensate_head(head: DenseHead, layer: LayerPlan, spatial: int) -> DenseHead:
    """Same input folding for the dense head.

    The head sees the final feature map flattened channel-major, so channel
    ``c`` owns the contiguous column block ``[c*spatial, (c+1)*spatial)``.
    """
    w = np.array(head.weights)
    for ch, rep in sorted(layer.compensation.items()):
        w[:, rep * spatial : (rep + 1) * spatial] += w[:, ch * spatial : (ch + 1) * spatial]
    cols = [c * spatial + s for c in layer.retained for s in range(spatial)]
    bias = None if head.bias is None else np.array(head.bias)
    return DenseHead(weights=w[:, cols], bias=bias)


def apply_plan(model: ModelGraph, plan: PruningPlan) -> ModelGraph:
    """Produce the pruned model a plan describes.

    Each block loses its removed output channels (conv filters plus BN
    entries); the following block first folds those channels' input kernel
    slices into their representatives (where the plan compensates), then
    drops them.  The dense head's column blocks get the same treatment when
    the final conv layer is pruned.
    """
    _check_plan_fits(model, plan)
    new_blocks = []
    for idx, (block, layer) in enumerate(zip(model.blocks, plan.layers)):
        weights = np.array(block.conv.weights)
        if idx > 0:
            weights = _compensate_inputs(weights, plan.layers[idx - 1])
        keep = list(layer.retained)
        new_blocks.append(
            LayerBlock(
                conv=ConvKernel(
                    weights[keep], stride=block.conv.stride, padding=block.conv.padding
                ),
                bn=BnParams(
                    gamma=np.array(block.bn.gamma[keep]),
                    beta=np.array(block.bn.beta[keep]),
                    eps=block.bn.eps,
                ),
                act=block.act,
                pool=block.pool,
            )
        )

    head = model.head
    if head is not None and plan.layers[-1].removed:
        h, w = model.output_geometry()[-1]
        head = _compensate_head(head, plan.layers[-1], h * w)
    return ModelGraph(
        blocks=tuple(new_blocks),
        head=head,
        input_height=model.input_height,
        input_width=model.input_width,
    )


def single_removal_plan(
    model: ModelGraph, layer_index: int, channel: int, representative: int
) -> PruningPlan:
    """Plan that removes exactly one channel, compensating into the given
    representative.  Used to measure the effect of one removal in isolation.
    """
    if channel == representative:
        raise ValueError("channel and representative must differ")
    layers = []
    for idx, block in enumerate(model.blocks):
        c = block.out_channels
        if idx != layer_index:
            layers.append(identity_layer_plan(c))
            continue
        lo, hi = sorted((channel, representative))
        groups = [[ch] for ch in range(c) if ch not in (lo, hi)]
        groups.append([lo, hi])
        assignment = ClusterAssignment.from_clusters(groups, c)
        reps = []
        for g in assignment.clusters():
            reps.append(representative if len(g) == 2 else g[0])
        layers.append(
            LayerPlan(
                clusters=assignment,
                representatives=tuple(reps),
                removed=(channel,),
                compensation={channel: representative},
            )
        )
    return PruningPlan(threshold=0.0, linkage=Linkage.COMPLETE, layers=tuple(layers))


@dataclass(frozen=True)
class FlopsReport:
    """Per-layer operation counts for one forward pass at a given batch."""

    batch: int
    entries: tuple[dict, ...]
    total: int
    baseline_total: int | None = None

    @property
    def pruned_ratio(self) -> float | None:
        if self.baseline_total is None or self.baseline_total == 0:
            return None
        return 1.0 - self.total / self.baseline_total

    def to_json(self) -> str:
        doc = {
            "batch": self.batch,
            "conventions": FLOPS_CONVENTIONS,
            "layers": list(self.entries),
            "total": self.total,
        }
        if self.baseline_total is not None:
            doc["baseline_total"] = self.baseline_total
            doc["pruned_ratio"] = self.pruned_ratio
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def flops_count(
    model: ModelGraph, batch: int = 1, baseline_total: int | None = None
) -> FlopsReport:
    """Exact operation count for one forward pass.

    Conv: 2 * K*K*Cin per output element, times Cout and the output grid.
    BN costs 2 and the activation its own constant per output element.
    Pooling reads each input element once.  The dense head is 2 FLOPs per
    weight (bias adds are not counted).  Everything scales linearly with
    the batch.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    entries = []
    total = 0
    h, w = model.input_height, model.input_width
    for idx, block in enumerate(model.blocks):
        k = block.conv.kernel_size
        c_in, c_out = block.in_channels, block.out_channels
        h_out, w_out = block.conv.output_size(h, w)
        out_elems = c_out * h_out * w_out * batch
        conv = 2 * k * k * c_in * out_elems
        bn = 2 * out_elems
        act = _ACT_FLOPS[block.act] * out_elems
        entry = {
            "layer": idx,
            "kind": "conv_bn_act",
            "in_channels": c_in,
            "out_channels": c_out,
            "output_size": [h_out, w_out],
            "conv": conv,
            "bn": bn,
            "activation": act,
        }
        subtotal = conv + bn + act
        h, w = h_out, w_out
        if block.pool is not None:
            pool = c_out * h * w * batch
            entry["pool"] = pool
            subtotal += pool
            h //= block.pool.size
            w //= block.pool.size
        entry["subtotal"] = subtotal
        entries.append(entry)
        total += subtotal
    if model.head is not None:
        n_out, n_in = model.head.weights.shape
        dense = 2 * n_in * n_out * batch
        entries.append(
            {
                "layer": len(model.blocks),
                "kind": "dense",
                "in_features": n_in,
                "out_features": n_out,
                "subtotal": dense,
            }
        )
        total += dense
    return FlopsReport(
        batch=batch, entries=tuple(entries), total=total, baseline_total=baseline_total
    )


def compute_lambda(kernel_slice: np.ndarray, n_in: int, n_out: int) -> float:
    """Scale factor tying a channel's similarity gap to the next layer's
    output shift: (n_in / n_out) * K^2 * ||W||^2 for the K x K slice W that
    consumes the channel.
    """
    kernel_slice = np.asarray(kernel_slice, dtype=np.float64)
    if kernel_slice.ndim != 2 or kernel_slice.shape[0] != kernel_slice.shape[1]:
        raise ValueError(f"kernel slice must be square 2-D, got {kernel_slice.shape}")
    k = kernel_slice.shape[0]
    return (n_in / n_out) * k * k * float(np.sum(kernel_slice**2))
