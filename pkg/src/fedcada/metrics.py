"""Linear CKA similarity between client moment states, plus round records.

Linear CKA of two column-centered matrices Z1, Z2 sharing a row count:

    ||Z1' Z2||_F^2 / (||Z1' Z1||_F * ||Z2' Z2||_F)

which lies in [0, 1], equals 1 for identical inputs, and is invariant to
orthogonal transformations and isotropic scaling. The squared-denominator
variant is kept behind a flag for comparison only; it does not satisfy
those properties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Segment
from .optim import MomentState


class UndefinedSimilarityError(ValueError):
    """CKA is undefined when a centered matrix has zero norm."""


def linear_cka(z1: np.ndarray, z2: np.ndarray, *, squared_denominator: bool = False) -> float:
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.ndim != 2 or z2.ndim != 2:
        raise ValueError("cka inputs must be 2-D matrices")
    if z1.shape[0] != z2.shape[0]:
        raise ValueError(f"cka inputs need equal row counts: {z1.shape[0]} vs {z2.shape[0]}")
    if z1.shape[0] < 2:
        raise ValueError("cka needs at least 2 rows")
    c1 = z1 - z1.mean(axis=0)
    c2 = z2 - z2.mean(axis=0)
    norm1 = np.linalg.norm(c1.T @ c1)
    norm2 = np.linalg.norm(c2.T @ c2)
    if norm1 == 0.0 or norm2 == 0.0:
        raise UndefinedSimilarityError("a centered matrix is identically zero")
    numerator = np.linalg.norm(c1.T @ c2) ** 2
    if squared_denominator:
        return float(numerator / (norm1**2 * norm2**2))
    return float(numerator / (norm1 * norm2))


def _layer_matrices(vector: np.ndarray, manifest: tuple[Segment, ...]) -> dict[int, np.ndarray]:
    return {
        seg.layer: vector[seg.offset : seg.offset + seg.size].reshape(seg.rows, seg.cols)
        for seg in manifest
        if seg.kind == "weight"
    }


def moment_cka_by_layer(
    states: list[MomentState], manifest: tuple[Segment, ...], moment: str = "m"
) -> dict[int, np.ndarray]:
    """Per weight layer, the K x K pairwise CKA matrix of one moment.

    Bias segments carry no matrix structure and are excluded. Undefined
    pairs (a centered layer identically zero, e.g. before any training)
    are reported as NaN rather than silently 0 or 1; diagonals are 1.
    """
    if len(states) < 2:
        raise ValueError("need at least 2 moment states to compare")
    if moment not in ("m", "v"):
        raise ValueError(f"moment must be 'm' or 'v', got {moment!r}")
    vectors = [getattr(s, moment) for s in states]
    layered = [_layer_matrices(vec, manifest) for vec in vectors]
    layers = sorted(layered[0])
    k = len(states)
    out = {layer: np.eye(k) for layer in layers}
    for i in range(k):
        for j in range(i + 1, k):
            for layer in layers:
                try:
                    value = linear_cka(layered[i][layer], layered[j][layer])
                except UndefinedSimilarityError:
                    value = float("nan")
                out[layer][i, j] = out[layer][j, i] = value
    return out


def moment_cka_matrix(
    states: list[MomentState], manifest: tuple[Segment, ...], moment: str = "m"
) -> np.ndarray:
    """K x K matrix of layer-averaged linear CKA between moment states.

    Each cell is the unweighted mean over weight layers; a cell is NaN if
    any of its layers is undefined. The diagonal is exactly 1 (self-CKA,
    short-circuited) and the matrix is exactly symmetric.
    """
    per_layer = moment_cka_by_layer(states, manifest, moment)
    stacked = np.stack([per_layer[layer] for layer in sorted(per_layer)])
    matrix = stacked.mean(axis=0)
    np.fill_diagonal(matrix, 1.0)
    return matrix


def mean_offdiagonal(matrix: np.ndarray) -> float | None:
    """Mean of the defined (non-NaN) off-diagonal cells, None if all undefined."""
    k = matrix.shape[0]
    off = matrix[~np.eye(k, dtype=bool)]
    defined = off[np.isfinite(off)]
    if defined.size == 0:
        return None
    return float(defined.mean())


@dataclass(frozen=True)
class RoundLog:
    """One communication round's record."""

    round: int
    mean_client_train_loss: float
    global_test_loss: float
    global_test_acc: float
    broadcast_bytes: int
    wall_ms: int
    cka_mean_offdiag_m: float | None = None
    cka_mean_offdiag_v: float | None = None

    def __post_init__(self):
        if np.isfinite(self.global_test_acc) and not 0.0 <= self.global_test_acc <= 1.0:
            raise ValueError(f"accuracy out of [0, 1]: {self.global_test_acc}")


def summarize_round(
    round_index: int,
    mean_client_train_loss: float,
    global_test_loss: float,
    global_test_acc: float,
    broadcast_bytes: int,
    wall_ms: int,
    cka_mean_offdiag_m: float | None = None,
    cka_mean_offdiag_v: float | None = None,
) -> RoundLog:
    """Assemble the round record; CKA fields stay None when not tracked."""
    return RoundLog(
        round=round_index,
        mean_client_train_loss=float(mean_client_train_loss),
        global_test_loss=float(global_test_loss),
        global_test_acc=float(global_test_acc),
        broadcast_bytes=int(broadcast_bytes),
        wall_ms=int(wall_ms),
        cka_mean_offdiag_m=cka_mean_offdiag_m,
        cka_mean_offdiag_v=cka_mean_offdiag_v,
    )
