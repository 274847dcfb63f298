"""Region relations: attention-pooled descriptors mixed over a learned graph.

A 1x1 conv scores n soft region maps over the feature grid (sigmoid, one map
per region). Each region pools the feature map weighted by its own attention
into a d-dim descriptor. Descriptors then pass through graph-conv layers
whose mixing matrix is a learned n x n adjacency, normalized per row with a
softmax after adding the identity (so every region always keeps a self loop
and each row is a proper distribution). The mixed descriptors are broadcast
back over the grid through the same attention maps and added residually to
the input features through a final 1x1 conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class RramConfig:
    nodes: int = 8        # regions n
    dim: int = 64         # descriptor width d
    gcn_layers: int = 1   # graph conv depth (0 = pass descriptors through)

    def __post_init__(self) -> None:
        if self.nodes < 1:
            raise ValidationError(f"nodes must be >= 1, got {self.nodes}")
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.gcn_layers < 0:
            raise ValidationError(f"gcn_layers must be >= 0, got {self.gcn_layers}")


def attention_maps(x: Tensor, theta_w: Tensor, theta_b: Tensor) -> Tensor:
    """Soft region scores: sigmoid of a 1x1 conv, [c, h, w] -> [n, h, w]."""
    return T.sigmoid(T.conv2d(x, theta_w, theta_b, padding=0))


def weighted_pool(x: Tensor, phi_w: Tensor, phi_b: Tensor, maps: Tensor) -> Tensor:
    """Attention-weighted global pooling to region descriptors Z [n, d].

    Z[v] = mean over cells of maps[v] * phi(x), with phi a 1x1 conv to d
    channels. Implemented as a single [n, hw] @ [hw, d] product.
    """
    phi = T.conv2d(x, phi_w, phi_b, padding=0)
    d, h, w = phi.dims
    n = maps.dims[0]
    if maps.dims[1:] != (h, w):
        raise DimensionError(f"attention maps {maps.dims} do not cover grid {h}x{w}")
    maps_flat = T.reshape(maps, (n, h * w))
    phi_flat = T.reshape(phi, (d, h * w))
    z = T.matmul(maps_flat, T.transpose2d(phi_flat))
    return T.scale(z, 1.0 / (h * w))


def normalize_adjacency(adj: Tensor) -> Tensor:
    """Row-normalize a learned adjacency: softmax over rows of (A + I).

    The identity is added on every forward pass, so self loops survive any
    value the optimizer drives A to, and each output row sums to 1.
    """
    if adj.data.ndim != 2 or adj.dims[0] != adj.dims[1]:
        raise DimensionError(f"adjacency must be square, got {adj.dims}")
    eye = Tensor(np.eye(adj.dims[0]))
    return T.softmax_rows(T.add(adj, eye))


def gcn_layer(h: Tensor, a_hat: Tensor, weight: Tensor) -> Tensor:
    """One graph convolution: relu(a_hat @ h @ weight), descriptor width kept."""
    if weight.dims[0] != weight.dims[1]:
        raise DimensionError(f"gcn weight must be square, got {weight.dims}")
    if h.dims[1] != weight.dims[0]:
        raise DimensionError(f"descriptor width {h.dims[1]} vs weight {weight.dims}")
    return T.relu(T.matmul(T.matmul(a_hat, h), weight))


def broadcast_fuse(h_out: Tensor, maps: Tensor, x: Tensor,
                   psi_w: Tensor, psi_b: Tensor) -> Tensor:
    """Spread descriptors back over the grid and add residually to x.

    mixed[c, p] = sum_v h_out[v, c] * maps[v, p]; a 1x1 conv psi takes the d
    mixed channels back to x's channel count, and the result adds to x.
    """
    n, d = h_out.dims
    _, gh, gw = maps.dims
    maps_flat = T.reshape(maps, (n, gh * gw))
    mixed = T.matmul(T.transpose2d(h_out), maps_flat)       # [d, hw]
    mixed = T.reshape(mixed, (d, gh, gw))
    fused = T.conv2d(mixed, psi_w, psi_b, padding=0)        # [c, h, w]
    return T.add(x, fused)


def rram_forward(x: Tensor, params: dict[str, Tensor], cfg: RramConfig,
                 prefix: str = "rram.",
                 return_parts: bool = False):
    """Full region-relation block on features x [c, h, w].

    params holds, under the given prefix: theta.w/theta.b (attention conv),
    phi.w/phi.b (descriptor conv), adj (learned adjacency), gcn{i}.w for the
    graph layers, psi.w/psi.b (fusion conv).
    """
    p = lambda name: params[prefix + name]
    maps = attention_maps(x, p("theta.w"), p("theta.b"))
    z = weighted_pool(x, p("phi.w"), p("phi.b"), maps)
    a_hat = normalize_adjacency(p("adj"))
    h = z
    for i in range(cfg.gcn_layers):
        h = gcn_layer(h, a_hat, p(f"gcn{i}.w"))
    out = broadcast_fuse(h, maps, x, p("psi.w"), p("psi.b"))
    if return_parts:
        return out, {"maps": maps, "z": z, "a_hat": a_hat, "h": h}
    return out
