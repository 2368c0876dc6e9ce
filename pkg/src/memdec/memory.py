"""Fixed-size buffer memory extending the decoder state.

The buffer is a small matrix of cells read and written once per decode step,
both through content-based addressing: scores compare each cell against the
current vector-state, a logistic gate interpolates the fresh softmax weights
with the previous step's weights, and writing removes content multiplicatively
(erase) before inserting new content additively (add).

Timing convention: the read at step t addresses with the previous vector-state,
the write at step t addresses with the state just computed. Reading and writing
may share one weight stream, which is the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, attend
from .autodiff import ShapeError, Tensor, concat
from .encoder import GruParams, SourceMemory, gru_step


@dataclass
class BufferMemory:
    """Cell matrix (B, n, m) plus the read/write address vectors (B, n)."""

    cells: Tensor
    read_weights: Tensor
    write_weights: Tensor

    @property
    def n_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def cell_width(self) -> int:
        return self.cells.shape[2]


@dataclass
class BufferAddressParams:
    """Content scoring and interpolation-gate weights for one head."""

    w_a: Tensor  # (m, m), applied to each cell
    u_a: Tensor  # (m, m), applied to the addressing state
    v: Tensor    # (m,)
    w_g: Tensor  # (m,), gate vector; gate = sigmoid(w_g . state)


@dataclass
class WriteParams:
    w_ers: Tensor  # (m, m)
    w_add: Tensor  # (m, m)


@dataclass
class DecoderState:
    """Vector-state (B, m), buffer memory, and the last source context."""

    s: Tensor
    buffer: BufferMemory | None
    context: Tensor | None = None


@dataclass
class MemDecParams:
    """Everything one decode step needs, bundled."""

    read_addr: BufferAddressParams
    write_addr: BufferAddressParams | None  # None when weights are shared
    write: WriteParams
    w_ini: Tensor    # (2d, m), source summary to initial cell content
    w_r: Tensor      # (m, m), buffer read to pre-state
    w_y: Tensor      # (embed, m), previous word to pre-state
    gru: GruParams
    attention: AttentionParams
    share_weights: bool = True


def init_buffer(source: SourceMemory, w_ini: Tensor, rng, n_cells: int,
                noise_std: float = 0.1, noise: np.ndarray | None = None,
                literal_init: bool = False):
    """Fill every cell with a transform of the mean annotation plus per-cell noise.

    Returns (buffer, m_bar). The noise breaks the symmetry between cells;
    without it content addressing could never tell them apart. `literal_init`
    divides by the source length after the nonlinearity instead of averaging
    inside it, which shrinks the init toward zero for long sentences.
    """
    ann = source.annotations
    batch, length, width = ann.shape
    if w_ini.shape[0] != width:
        raise ShapeError(f"init_buffer: w_ini expects width {w_ini.shape[0]}, source has {width}")
    m = w_ini.shape[1]
    mask3 = Tensor(source.mask.reshape(batch, length, 1))
    summed = (ann * mask3).sum(axis=1)
    inv_len = Tensor(1.0 / source.mask.sum(axis=1, keepdims=True))
    if literal_init:
        m_bar = (summed @ w_ini).tanh() * inv_len
    else:
        m_bar = ((summed * inv_len) @ w_ini).tanh()
    if noise is None:
        if noise_std > 0.0:
            noise = rng.normal(0.0, noise_std, size=(batch, n_cells, m))
        else:
            noise = np.zeros((batch, n_cells, m))
    cells = m_bar.reshape(batch, 1, m) + Tensor(noise)
    uniform = np.full((batch, n_cells), 1.0 / n_cells)
    return BufferMemory(cells=cells, read_weights=Tensor(uniform), write_weights=Tensor(uniform)), m_bar


def address(state: Tensor, cells: Tensor, prev_weights: Tensor, params: BufferAddressParams):
    """Convex blend of the previous weights with fresh content-based ones.

    Scores have no nonlinearity; the gate is a single logistic scalar per row.
    Returns (weights (B, n), gate (B, 1)).
    """
    batch, n_cells, m = cells.shape
    cell_scores = (cells.reshape(batch * n_cells, m) @ params.w_a).reshape(batch, n_cells, m)
    state_scores = (state @ params.u_a).reshape(batch, 1, m)
    scores = ((cell_scores + state_scores) * params.v).sum(axis=2)
    fresh = scores.softmax(axis=1)
    gate = (state * params.w_g).sum(axis=1, keepdims=True).sigmoid()
    return gate * prev_weights + (1.0 - gate) * fresh, gate


def read_buffer(state: Tensor, buffer: BufferMemory, params: BufferAddressParams):
    """Address with the given state and blend the cells by the new weights.

    Returns (content (B, m), new_read_weights (B, n), gate (B, 1)).
    """
    weights, gate = address(state, buffer.cells, buffer.read_weights, params)
    batch, n_cells, _ = buffer.cells.shape
    content = (weights.reshape(batch, n_cells, 1) * buffer.cells).sum(axis=1)
    return content, weights, gate


def pre_state(read_content: Tensor, y_prev_embedding: Tensor, w_r: Tensor, w_y: Tensor) -> Tensor:
    """Intermediate state combining the buffer read with the previous word."""
    return (read_content @ w_r + y_prev_embedding @ w_y).tanh()


def write_buffer(state: Tensor, buffer: BufferMemory, addr: BufferAddressParams | None,
                 wp: WriteParams, share_weights: bool = True):
    """Erase-then-add write, addressed by the current vector-state.

    With share_weights the write reuses the read weights already stored on the
    buffer; otherwise it maintains its own weight stream through `addr`.
    Erasion scales each cell entry toward zero by at most its write weight;
    addition inserts at most the write weight per entry.

    Returns (new_buffer, write_weights, gate, mu_ers, mu_add); gate is None
    when the weights are shared.
    """
    batch, n_cells, m = buffer.cells.shape
    if share_weights:
        weights, gate = buffer.read_weights, None
    else:
        weights, gate = address(state, buffer.cells, buffer.write_weights, addr)
    mu_ers = (state @ wp.w_ers).sigmoid()
    mu_add = (state @ wp.w_add).sigmoid()
    w3 = weights.reshape(batch, n_cells, 1)
    erased = buffer.cells * (1.0 - w3 * mu_ers.reshape(batch, 1, m))
    written = erased + w3 * mu_add.reshape(batch, 1, m)
    new_buffer = BufferMemory(cells=written, read_weights=buffer.read_weights, write_weights=weights)
    return new_buffer, weights, gate, mu_ers, mu_add


def decode_step(prev: DecoderState, y_prev_embedding: Tensor, source: SourceMemory,
                params: MemDecParams, source_proj: Tensor | None = None,
                want_trace: bool = False):
    """One full decoder step over both memories.

    Order: read the buffer with the previous vector-state, form the pre-state
    from that read and the previous word, read the source with the pre-state,
    update the vector-state with a gated recurrent step whose carried state is
    the buffer read, then write the buffer with the new vector-state.

    Returns (next_state, (s, context, y_prev_embedding), trace_or_none).
    """
    buffer = prev.buffer
    read_content, read_weights, read_gate = read_buffer(prev.s, buffer, params.read_addr)
    s_tilde = pre_state(read_content, y_prev_embedding, params.w_r, params.w_y)
    context, alpha = attend(s_tilde, source, params.attention, source_proj=source_proj)
    s_new = gru_step(read_content, concat([y_prev_embedding, context], axis=1), params.gru)
    mid = BufferMemory(cells=buffer.cells, read_weights=read_weights,
                       write_weights=buffer.write_weights)
    new_buffer, write_weights, write_gate, mu_ers, mu_add = write_buffer(
        s_new, mid, params.write_addr, params.write, share_weights=params.share_weights)

    trace = None
    if want_trace:
        trace = {
            "alpha": alpha.data[0].tolist(),
            "w_r": read_weights.data[0].tolist(),
            "w_w": write_weights.data[0].tolist(),
            "gate_r": float(read_gate.data[0, 0]),
            "gate_w": float(read_gate.data[0, 0]) if write_gate is None else float(write_gate.data[0, 0]),
            "mu_ers_norm": float(np.linalg.norm(mu_ers.data[0])),
            "mu_add_norm": float(np.linalg.norm(mu_add.data[0])),
        }
    next_state = DecoderState(s=s_new, buffer=new_buffer, context=context)
    return next_state, (s_new, context, y_prev_embedding), trace
