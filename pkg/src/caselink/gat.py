"""Graph attention encoder with hand-written forward and backward passes.

One attention head per layer. For node i with neighborhood N(i) plus a
transient self-loop:

    z_j    = W h_j
    e_ij   = LeakyReLU(a_src . z_i + a_dst . z_j)
    alpha  = softmax_j(e_ij)  over j in N(i) u {i}
    h'_i   = sum_j alpha_ij z_j

ELU is applied between layers, identity after the last, so final cosine
similarities span [-1, 1]. Dropout (training only) hits layer inputs and
attention weights. All arithmetic is float64 so analytic gradients can be
validated against central finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NumericalError, TraceError

_MAGIC = b"GATC"
_FORMAT_VERSION = 1


@dataclass
class LayerParams:
    W: np.ndarray  # (d_in, d_out)
    a_src: np.ndarray  # (d_out,)
    a_dst: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "LayerParams":
        return LayerParams(self.W.copy(), self.a_src.copy(), self.a_dst.copy())


@dataclass
class GatParams:
    layers: list[LayerParams]
    leaky_slope: float = 0.2
    dropout_rate: float = 0.0

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("at least one layer is required")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must be in (0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise DimensionError(
                    f"layer dims do not chain: {prev.d_out} -> {nxt.d_in}"
                )

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].d_in] + [layer.d_out for layer in self.layers]

    def copy(self) -> "GatParams":
        return GatParams(
            layers=[layer.copy() for layer in self.layers],
            leaky_slope=self.leaky_slope,
            dropout_rate=self.dropout_rate,
        )


@dataclass
class LayerGrads:
    W: np.ndarray
    a_src: np.ndarray
    a_dst: np.ndarray


@dataclass
class LayerTrace:
    """Everything the backward pass needs to replay one layer exactly."""

    h_used: np.ndarray  # layer input after input dropout
    z: np.ndarray  # (N, d_out)
    raw: np.ndarray  # per-edge pre-LeakyReLU logits
    alpha: np.ndarray  # per-edge attention after softmax
    alpha_used: np.ndarray  # after attention dropout
    pre_act: np.ndarray  # aggregated output before activation
    apply_elu: bool
    in_mask: np.ndarray | None  # dropout keep masks, None in eval mode
    att_mask: np.ndarray | None


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]
    structure: "_SelfLoopStructure"
    train_mode: bool
    output: np.ndarray


@dataclass(frozen=True)
class _SelfLoopStructure:
    """CSR edge structure of A + I: per-edge aggregating row and neighbor col."""

    indptr: np.ndarray
    row: np.ndarray  # aggregating node per edge
    col: np.ndarray  # neighbor per edge
    n_nodes: int


def prepare_structure(adjacency: sp.spmatrix) -> _SelfLoopStructure:
    n = adjacency.shape[0]
    if adjacency.shape != (n, n):
        raise DimensionError("adjacency must be square")
    with_loops = sp.csr_matrix(adjacency, dtype=np.float64) + sp.identity(
        n, format="csr", dtype=np.float64
    )
    with_loops.sum_duplicates()
    with_loops.sort_indices()
    indptr = with_loops.indptr.astype(np.int64)
    col = with_loops.indices.astype(np.int64)
    row = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    return _SelfLoopStructure(indptr=indptr, row=row, col=col, n_nodes=n)


def init_params(
    seed: int,
    dims: list[int] | tuple[int, ...],
    dropout: float = 0.0,
    slope: float = 0.2,
) -> GatParams:
    """Glorot-uniform initialization, deterministic per seed.

    W entries are drawn from +-sqrt(6 / (d_in + d_out)); the attention vector
    pair (a_src, a_dst) is drawn jointly with fan 2*d_out + 1.
    """
    if len(dims) < 2:
        raise DimensionError("dims must chain at least one layer (length >= 2)")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims, dims[1:]):
        limit_w = np.sqrt(6.0 / (d_in + d_out))
        limit_a = np.sqrt(6.0 / (2 * d_out + 1))
        W = rng.uniform(-limit_w, limit_w, size=(d_in, d_out))
        a = rng.uniform(-limit_a, limit_a, size=2 * d_out)
        layers.append(LayerParams(W=W, a_src=a[:d_out], a_dst=a[d_out:]))
    return GatParams(layers=layers, dropout_rate=dropout, leaky_slope=slope)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(pre: np.ndarray) -> np.ndarray:
    # d/dx elu(x) = 1 for x > 0, exp(x) otherwise
    return np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0.0)))


def _layer_forward(
    layer: LayerParams,
    h_in: np.ndarray,
    structure: _SelfLoopStructure,
    slope: float,
    apply_elu: bool,
    dropout_rate: float,
    in_mask: np.ndarray | None,
    att_mask: np.ndarray | None,
) -> tuple[np.ndarray, LayerTrace]:
    row, col, indptr = structure.row, structure.col, structure.indptr
    keep = 1.0 - dropout_rate

    h_used = h_in if in_mask is None else h_in * in_mask / keep
    z = h_used @ layer.W
    u = z @ layer.a_src
    v = z @ layer.a_dst
    raw = u[row] + v[col]
    e = np.where(raw > 0, raw, slope * raw)

    # every row has at least its self-loop, so reduceat segments are non-empty
    row_max = np.maximum.reduceat(e, indptr[:-1])
    ex = np.exp(e - row_max[row])
    denom = np.add.reduceat(ex, indptr[:-1])
    alpha = ex / denom[row]
    alpha_used = alpha if att_mask is None else alpha * att_mask / keep

    pre_act = np.add.reduceat(alpha_used[:, None] * z[col], indptr[:-1], axis=0)
    out = _elu(pre_act) if apply_elu else pre_act
    trace = LayerTrace(
        h_used=h_used,
        z=z,
        raw=raw,
        alpha=alpha,
        alpha_used=alpha_used,
        pre_act=pre_act,
        apply_elu=apply_elu,
        in_mask=in_mask,
        att_mask=att_mask,
    )
    return out, trace


def _draw_masks(
    rng: np.random.Generator,
    rate: float,
    h_shape: tuple[int, int],
    structure: _SelfLoopStructure,
) -> tuple[np.ndarray, np.ndarray]:
    in_mask = (rng.random(h_shape) >= rate).astype(np.float64)
    att_mask = (rng.random(len(structure.row)) >= rate).astype(np.float64)
    # A fully dropped neighborhood or feature row would zero a node's output
    # row, which the cosine-based losses cannot accept; such rows keep all
    # their weights.
    dead_rows = np.flatnonzero(~in_mask.any(axis=1))
    if len(dead_rows):
        in_mask[dead_rows] = 1.0
    kept = np.add.reduceat(att_mask, structure.indptr[:-1])
    dead = np.flatnonzero(kept == 0.0)
    for i in dead:
        att_mask[structure.indptr[i] : structure.indptr[i + 1]] = 1.0
    return in_mask, att_mask


def gat_layer_forward(
    layer: LayerParams,
    h_in: np.ndarray,
    adjacency: sp.spmatrix,
    slope: float = 0.2,
    apply_elu: bool = True,
    train_mode: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, LayerTrace]:
    """Single-layer forward over a raw adjacency (self-loops added here)."""
    h_in = np.asarray(h_in, dtype=np.float64)
    if not np.all(np.isfinite(h_in)):
        raise NumericalError("non-finite value in layer input")
    structure = prepare_structure(adjacency)
    in_mask = att_mask = None
    if train_mode and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training with dropout requires an rng")
        in_mask, att_mask = _draw_masks(rng, dropout_rate, h_in.shape, structure)
    return _layer_forward(
        layer, h_in, structure, slope, apply_elu, dropout_rate, in_mask, att_mask
    )


def model_forward(
    params: GatParams,
    features: np.ndarray,
    adjacency: sp.spmatrix,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Apply all layers; rows 0..n-1 of the result are the case representations."""
    h = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite value in input features")
    if h.shape[1] != params.layers[0].d_in:
        raise DimensionError(
            f"feature dim {h.shape[1]} != first layer d_in {params.layers[0].d_in}"
        )
    structure = prepare_structure(adjacency)
    if structure.n_nodes != h.shape[0]:
        raise DimensionError("adjacency size does not match feature rows")

    use_dropout = train_mode and params.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("training with dropout requires an rng")

    traces: list[LayerTrace] = []
    for li, layer in enumerate(params.layers):
        apply_elu = li < len(params.layers) - 1
        in_mask = att_mask = None
        if use_dropout:
            in_mask, att_mask = _draw_masks(rng, params.dropout_rate, h.shape, structure)
        h, trace = _layer_forward(
            layer,
            h,
            structure,
            params.leaky_slope,
            apply_elu,
            params.dropout_rate,
            in_mask,
            att_mask,
        )
        traces.append(trace)
    return h, ForwardTrace(
        layers=traces, structure=structure, train_mode=train_mode, output=h
    )


def replay_forward(params: GatParams, trace: ForwardTrace) -> np.ndarray:
    """Recompute the forward pass from the trace's cached inputs and masks.

    Each layer is replayed from its stored post-dropout input, so the result
    is bitwise identical to the traced output.
    """
    _check_trace(params, trace)
    out = trace.layers[0].h_used
    for layer, lt in zip(params.layers, trace.layers):
        out, _ = _layer_forward(
            layer,
            lt.h_used,
            trace.structure,
            params.leaky_slope,
            lt.apply_elu,
            params.dropout_rate,
            None,  # h_used already has input dropout applied
            lt.att_mask,
        )
    return out


def _check_trace(params: GatParams, trace: ForwardTrace) -> None:
    if len(trace.layers) != len(params.layers):
        raise TraceError("trace layer count does not match parameters")
    for layer, lt in zip(params.layers, trace.layers):
        if lt.h_used.shape[1] != layer.d_in or lt.z.shape[1] != layer.d_out:
            raise TraceError("trace shapes do not match parameters")


def backward_gradients(
    params: GatParams,
    trace: ForwardTrace,
    d_out: np.ndarray,
) -> tuple[list[LayerGrads], np.ndarray]:
    """Exact reverse-mode gradients of the traced forward pass.

    Returns per-layer parameter gradients and the gradient with respect to
    the model input features.
    """
    _check_trace(params, trace)
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != trace.output.shape:
        raise TraceError(
            f"upstream gradient shape {d_out.shape} != output shape {trace.output.shape}"
        )
    structure = trace.structure
    row, col, indptr = structure.row, structure.col, structure.indptr
    keep = 1.0 - params.dropout_rate

    grads: list[LayerGrads] = []
    gh = d_out
    for layer, lt in zip(reversed(params.layers), reversed(trace.layers)):
        d_pre = gh * _elu_grad(lt.pre_act) if lt.apply_elu else gh

        # aggregation: pre_act[i] = sum_e alpha_used[e] * z[col[e]]
        d_alpha_used = np.einsum("ed,ed->e", d_pre[row], lt.z[col])
        dz = np.zeros_like(lt.z)
        np.add.at(dz, col, lt.alpha_used[:, None] * d_pre[row])

        d_alpha = (
            d_alpha_used if lt.att_mask is None else d_alpha_used * lt.att_mask / keep
        )
        # softmax backward per row segment
        s_row = np.add.reduceat(lt.alpha * d_alpha, indptr[:-1])
        de = lt.alpha * (d_alpha - s_row[row])
        draw = de * np.where(lt.raw > 0, 1.0, params.leaky_slope)

        du = np.add.reduceat(draw, indptr[:-1])
        dv = np.zeros(structure.n_nodes)
        np.add.at(dv, col, draw)
        dz += np.outer(du, layer.a_src) + np.outer(dv, layer.a_dst)

        da_src = lt.z.T @ du
        da_dst = lt.z.T @ dv
        dW = lt.h_used.T @ dz
        gh = dz @ layer.W.T
        if lt.in_mask is not None:
            gh = gh * lt.in_mask / keep
        grads.append(LayerGrads(W=dW, a_src=da_src, a_dst=da_dst))

    grads.reverse()
    return grads, gh


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

def save_checkpoint(
    params: GatParams, path: str | Path, sidecar: dict | None = None
) -> None:
    """Write the versioned binary checkpoint plus an optional JSON sidecar."""
    dims = params.dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<d", params.leaky_slope))
        fh.write(struct.pack("<d", params.dropout_rate))
        for layer in params.layers:
            fh.write(layer.W.astype("<f8").tobytes())
            fh.write(layer.a_src.astype("<f8").tobytes())
            fh.write(layer.a_dst.astype("<f8").tobytes())
    if sidecar is not None:
        sidecar_path = Path(str(path) + ".json")
        sidecar_path.write_text(
            json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def load_checkpoint(path: str | Path) -> GatParams:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise TraceError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _FORMAT_VERSION:
            raise TraceError(f"unsupported checkpoint version {version}")
        (n_dims,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims))
        (slope,) = struct.unpack("<d", fh.read(8))
        (dropout,) = struct.unpack("<d", fh.read(8))
        layers = []
        for d_in, d_out in zip(dims, dims[1:]):
            W = np.frombuffer(fh.read(8 * d_in * d_out), dtype="<f8").reshape(d_in, d_out)
            a_src = np.frombuffer(fh.read(8 * d_out), dtype="<f8")
            a_dst = np.frombuffer(fh.read(8 * d_out), dtype="<f8")
            layers.append(LayerParams(W=W.copy(), a_src=a_src.copy(), a_dst=a_dst.copy()))
    return GatParams(layers=layers, leaky_slope=slope, dropout_rate=dropout)
