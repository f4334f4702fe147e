"""
Multiple context fixing attachment.

Given one sentence vector per view (the original sentence and its
translations), each vector is corrected using the others as context:

1. self usability ``rho_k = sigmoid(v_k T_k)`` scores each view on its own;
2. relative usability is an additive attention where view ``i`` scores every
   view ``j`` (itself included) with ``x . tanh(v_i X_i + rho_j * v_j X_j)``,
   normalised by a softmax over ``j``;
3. the integrated context ``c_i = sum_k a_ik * (v_k U_k)`` mixes the views in
   a common space;
4. the gate ``w_k = sigmoid([v_k; c_k] V_k)`` rescales each dimension of
   ``v_k``, so a fixed vector never grows or changes sign.

All functions accept single vectors ``(d,)`` or batches ``(B, d)``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .Numerics import (
    Activation,
    DimensionError,
    FloatArray,
    GradTape,
    Tensor,
    activation,
    add,
    broadcast_scale,
    concat,
    glorot_uniform,
    hadamard,
    matmul,
    softmax,
    take,
)


class AttachmentError(ValueError):
    pass


@dataclass
class McfaParams:
    views: list[str]
    T: list[Tensor]  # (d, 1) self-usability scorers
    X: list[Tensor]  # (d, d) attention projections
    U: list[Tensor]  # (d, d) context projections
    V: list[Tensor]  # (2d, d) gate weights
    x: Tensor  # (d, 1) attention scorer shared by every view pair

    @classmethod
    def init(cls, views: Sequence[str], d: int, rng: np.random.Generator) -> McfaParams:
        """X, U, V Glorot-uniform; T and x zero, so training starts from
        usabilities of 0.5 and uniform attention."""
        T, X, U, V = [], [], [], []
        for view in views:
            T.append(Tensor.parameter(np.zeros((d, 1)), f"mcfa.{view}.T"))
            X.append(Tensor.parameter(glorot_uniform(rng, (d, d)), f"mcfa.{view}.X"))
            U.append(Tensor.parameter(glorot_uniform(rng, (d, d)), f"mcfa.{view}.U"))
            V.append(Tensor.parameter(glorot_uniform(rng, (2 * d, d)), f"mcfa.{view}.V"))
        return cls(list(views), T, X, U, V, Tensor.parameter(np.zeros((d, 1)), "mcfa.x"))

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def parameters(self) -> list[Tensor]:
        params = []
        for k in range(self.n_views):
            params += [self.T[k], self.X[k], self.U[k], self.V[k]]
        params.append(self.x)
        return params


@dataclass
class FixReport:
    # (..., m) with m views
    self_usability: FloatArray
    # (..., m, m); row i holds the relative usability of every view for view i
    attention: FloatArray
    contexts: list[FloatArray]
    gates: list[FloatArray]
    unaltered: list[FloatArray]
    # Differentiable fixed vectors, fed to the classifier.
    altered: list[Tensor]


def self_usability(v: Tensor, T: Tensor, tape: GradTape | None = None) -> Tensor:
    """``sigmoid(v T)``: one confidence in (0, 1) per sentence, shape ``(..., 1)``."""
    if T.ndim != 2 or T.shape[1] != 1 or v.shape[-1] != T.shape[0]:
        raise DimensionError(f"self usability needs v (..., d) and T (d, 1): {v.shape}, {T.shape}")
    return activation(matmul(v, T, tape=tape), Activation.SIGMOID, tape=tape)


def relative_usability(
    vectors: Sequence[Tensor],
    rho_self: Sequence[Tensor],
    params: McfaParams,
    tape: GradTape | None = None,
) -> list[Tensor]:
    """
    Attention rows: entry ``j`` of row ``i`` is the softmax over all views of
    ``x . tanh(v_i X_i + (v_j X_j) * rho_self_j)``.

    The self usability scales only the context role, including ``j == i``.
    """
    m = len(vectors)
    if m < 1:
        raise AttachmentError("relative usability needs at least one view")
    if len(rho_self) != m:
        raise AttachmentError(f"self usability given for {len(rho_self)} of {m} views")
    projected = [matmul(v, params.X[k], tape=tape) for k, v in enumerate(vectors)]
    as_context = [broadcast_scale(p, rho_self[k], tape=tape) for k, p in enumerate(projected)]
    rows = []
    for i in range(m):
        scores = [
            matmul(activation(add(projected[i], as_context[j], tape=tape), Activation.TANH, tape=tape), params.x, tape=tape)
            for j in range(m)
        ]
        rows.append(softmax(concat(scores, axis=-1, tape=tape), tape=tape))
    return rows


def attention_matrix(rows: Sequence[Tensor]) -> FloatArray:
    return np.stack([r.values for r in rows], axis=-2)


def integrate_context(
    vectors: Sequence[Tensor],
    attention_rows: Sequence[Tensor],
    params: McfaParams,
    tape: GradTape | None = None,
) -> list[Tensor]:
    """``c_i = sum_k a_ik * (v_k U_k)`` for every view ``i``."""
    m = len(vectors)
    if len(attention_rows) != m or any(r.shape[-1] != m for r in attention_rows):
        raise DimensionError(f"attention rows do not match {m} views")
    for i, row in enumerate(attention_rows):
        if not np.allclose(row.values.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9):
            raise AttachmentError(f"attention row {i} is not normalised")
    projected = [matmul(v, params.U[k], tape=tape) for k, v in enumerate(vectors)]
    contexts = []
    for row in attention_rows:
        context = broadcast_scale(projected[0], take(row, 0, tape=tape), tape=tape)
        for k in range(1, m):
            weighted = broadcast_scale(projected[k], take(row, k, tape=tape), tape=tape)
            context = add(context, weighted, tape=tape)
        contexts.append(context)
    return contexts


def fix_vectors(
    vectors: Sequence[Tensor],
    contexts: Sequence[Tensor],
    params: McfaParams,
    tape: GradTape | None = None,
    gate_override: float | None = None,
) -> tuple[list[Tensor], list[Tensor]]:
    """
    Gates ``w_k = sigmoid([v_k; c_k] V_k)`` and fixed vectors ``v_k * w_k``.

    ``gate_override`` replaces every gate with a constant (diagnostics only).
    """
    if len(contexts) != len(vectors):
        raise AttachmentError(f"{len(contexts)} contexts for {len(vectors)} views")
    gates, altered = [], []
    for k, (v, c) in enumerate(zip(vectors, contexts, strict=True)):
        if v.shape != c.shape:
            raise DimensionError(f"view {k}: vector {v.shape} and context {c.shape} differ")
        if gate_override is None:
            joined = concat([v, c], axis=-1, tape=tape)
            gate = activation(matmul(joined, params.V[k], tape=tape), Activation.SIGMOID, tape=tape)
        else:
            gate = Tensor(np.full(v.shape, gate_override))
        gates.append(gate)
        altered.append(hadamard(v, gate, tape=tape))
    return gates, altered


def mcfa_forward(
    vectors: Sequence[Tensor],
    params: McfaParams,
    tape: GradTape | None = None,
    gate_override: float | None = None,
) -> FixReport:
    """Self usability, relative usability, context integration and fixing, in order."""
    if len(vectors) != params.n_views:
        raise DimensionError(f"{len(vectors)} vectors for {params.n_views} views")
    rho = [self_usability(v, params.T[k], tape=tape) for k, v in enumerate(vectors)]
    rows = relative_usability(vectors, rho, params, tape=tape)
    contexts = integrate_context(vectors, rows, params, tape=tape)
    gates, altered = fix_vectors(vectors, contexts, params, tape=tape, gate_override=gate_override)
    return FixReport(
        self_usability=np.concatenate([r.values for r in rho], axis=-1),
        attention=attention_matrix(rows),
        contexts=[c.values for c in contexts],
        gates=[g.values for g in gates],
        unaltered=[v.values for v in vectors],
        altered=altered,
    )
