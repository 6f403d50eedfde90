"""The autoencoder: PointNet-style encoder, folding decoder, graph-topology
inference head, and graph-filtering output layer."""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import graphsignal as gs
from . import pointcloud as pc
from .errors import DomainError

FILTER_KINDS = ("none", "adjacency", "laplacian")


@dataclasses.dataclass
class ModelConfig:
    code_len: int = 512
    lattice_side: int = 45
    knn_k: int = 96
    sigma: float = 0.08
    mu: float = 0.5
    filter_kind: str = "none"
    encoder_point_widths: tuple = (64, 128, 1024)
    encoder_code_widths: tuple = (512,)
    fold_hidden: int = 512
    fold_inner_dim: int = 3
    topo_hidden: int = 256

    def __post_init__(self):
        if self.filter_kind not in FILTER_KINDS:
            raise DomainError(f"filter_kind must be one of {FILTER_KINDS}")
        widths = (
            list(self.encoder_point_widths)
            + list(self.encoder_code_widths)
            + [self.code_len, self.fold_hidden, self.fold_inner_dim, self.topo_hidden]
        )
        if any(w < 1 for w in widths):
            raise DomainError("all layer widths must be >= 1")
        if self.lattice_side < 2:
            raise DomainError("lattice_side must be >= 2")
        if not 1 <= self.knn_k < self.num_points:
            raise DomainError(
                f"knn_k must satisfy 1 <= k < M, got {self.knn_k} vs M={self.num_points}"
            )
        if self.sigma <= 0 or self.mu <= 0:
            raise DomainError("sigma and mu must be positive")

    @property
    def num_points(self):
        return self.lattice_side * self.lattice_side


@dataclasses.dataclass
class MlpLayer:
    weights: ad.Tensor  # (out, in)
    bias: ad.Tensor     # (out,)
    activation: str     # "relu" | "none"


class MlpStack:
    """A cascade of fully connected layers applied row-wise."""

    def __init__(self, layers):
        self.layers = layers

    def apply(self, x):
        for layer in self.layers:
            x = ad.add_bias(ad.matmul(x, ad.transpose(layer.weights)), layer.bias)
            if layer.activation == "relu":
                x = ad.relu(x)
        return x


def _init_stack(rng, dims, activations, name):
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(
            MlpLayer(
                ad.leaf(w, name=f"{name}.{i}.weights"),
                ad.leaf(b, name=f"{name}.{i}.bias"),
                activations[i],
            )
        )
    return MlpStack(layers)


@dataclasses.dataclass
class ModelState:
    config: ModelConfig
    encoder_point_mlp: MlpStack
    encoder_code_mlp: MlpStack
    fold1: MlpStack
    fold2: MlpStack
    topo1: MlpStack
    topo2: MlpStack
    lattice: gs.Lattice2D
    a0: gs.GraphAdjacency

    def named_parameters(self):
        """(name, tensor) pairs in a fixed deterministic order."""
        out = []
        stacks = [
            ("encoder_point_mlp", self.encoder_point_mlp),
            ("encoder_code_mlp", self.encoder_code_mlp),
            ("fold1", self.fold1),
            ("fold2", self.fold2),
            ("topo1", self.topo1),
            ("topo2", self.topo2),
        ]
        for stack_name, stack in stacks:
            for i, layer in enumerate(stack.layers):
                out.append((f"{stack_name}.{i}.weights", layer.weights))
                out.append((f"{stack_name}.{i}.bias", layer.bias))
        return out

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()


def init_model(config, seed=0):
    rng = np.random.default_rng(seed)
    c = config.code_len
    m = config.num_points
    point_dims = [3, *config.encoder_point_widths]
    point_acts = ["relu"] * (len(point_dims) - 1)
    code_dims = [config.encoder_point_widths[-1], *config.encoder_code_widths, c]
    code_acts = ["relu"] * (len(code_dims) - 2) + ["none"]
    fold_h = config.fold_hidden
    fold1_dims = [2 + c, fold_h, fold_h, config.fold_inner_dim]
    fold2_dims = [config.fold_inner_dim + c, fold_h, fold_h, 3]
    fold_acts = ["relu", "relu", "none"]
    topo1_dims = [m + c, config.topo_hidden]
    topo2_dims = [config.topo_hidden + c, m]
    model = ModelState(
        config=config,
        encoder_point_mlp=_init_stack(rng, point_dims, point_acts, "encoder_point_mlp"),
        encoder_code_mlp=_init_stack(rng, code_dims, code_acts, "encoder_code_mlp"),
        fold1=_init_stack(rng, fold1_dims, fold_acts, "fold1"),
        fold2=_init_stack(rng, fold2_dims, fold_acts, "fold2"),
        topo1=_init_stack(rng, topo1_dims, ["relu"], "topo1"),
        topo2=_init_stack(rng, topo2_dims, ["relu"], "topo2"),
        lattice=gs.make_lattice(config.lattice_side),
        a0=None,
    )
    model.a0 = gs.build_initial_adjacency(model.lattice, config.knn_k, config.sigma)
    return model


def encode(model, cloud):
    """Permutation-invariant latent code for a point cloud, as a 1 x C row."""
    if len(cloud) < 1:
        raise DomainError("cannot encode an empty point cloud")
    x = ad.leaf(cloud.points)
    features = model.encoder_point_mlp.apply(x)
    pooled = ad.as_row(ad.maxpool_over_points(features))
    return model.encoder_code_mlp.apply(pooled)


def fold(model, code):
    """Fold the canonical 2D lattice into 3D, conditioned on the code."""
    m = model.config.num_points
    lattice = ad.leaf(model.lattice.nodes)
    tiled = ad.tile_rows(code, m)
    inner = model.fold1.apply(ad.concat_cols(lattice, tiled))
    return model.fold2.apply(ad.concat_cols(inner, tiled))


def topology_rows(model, code):
    """Row-stochastic pre-symmetrization adjacency (softmax rows)."""
    m = model.config.num_points
    a0 = ad.leaf(model.a0.weights)
    tiled = ad.tile_rows(code, m)
    hidden = model.topo1.apply(ad.concat_cols(a0, tiled))
    logits = model.topo2.apply(ad.concat_cols(hidden, tiled))
    return ad.softmax_rows(logits)


def infer_topology(model, code):
    """Learned adjacency: softmax rows, then symmetrized."""
    rows = topology_rows(model, code)
    return ad.scale(ad.add(rows, ad.transpose(rows)), 0.5)


def reconstruct(model, cloud):
    """Full forward pass.

    Returns (coarse, refined, adjacency) tensors; with filter_kind "none"
    the refined output aliases the coarse one and the adjacency is the
    fixed initial graph.
    """
    code = encode(model, cloud)
    coarse = fold(model, code)
    kind = model.config.filter_kind
    if kind == "none":
        return coarse, coarse, ad.leaf(model.a0.weights)
    adjacency = infer_topology(model, code)
    if kind == "adjacency":
        refined = ad.scale(ad.add(coarse, ad.matmul(adjacency, coarse)), 0.5)
    else:
        lap = ad.laplacian_from_adjacency(adjacency)
        refined = ad.spd_solve(ad.add_diag(lap, model.config.mu), coarse)
    return coarse, refined, adjacency


def reconstruction_loss(model, cloud, loss_kind="augmented"):
    """Chamfer loss between the input cloud and its refined reconstruction."""
    _, refined, _ = reconstruct(model, cloud)
    return pc.chamfer_loss(refined, cloud.points, kind=loss_kind)
