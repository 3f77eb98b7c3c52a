"""Discrete Poisson image editing with source-gradient guidance.

The blend region Omega is given as a boolean mask on a *patch frame* (the
source crop). ``dest_offset = (dx, dy)`` maps patch pixel ``(row, col)`` to
target pixel ``(row + dy, col + dx)``. For every Omega pixel p the 5-point
stencil gives

    |N_p| f_p - sum_{q in N_p ∩ Omega} f_q
        = sum_{q in N_p ∩ dOmega} f*_q + sum_{q in N_p} (g_p - g_q)

with Dirichlet values f* read from the target and guidance g from the source.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .image import GrayImage

# (d_row, d_col) for the 4-neighbourhood
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class PoissonError(ValueError):
    """The blend problem is malformed."""


class BorderError(PoissonError):
    """Omega touches the raster border, so the Dirichlet ring is incomplete."""


class SolverError(ArithmeticError):
    """Non-finite values appeared while solving."""


@dataclass(frozen=True, eq=False)
class PoissonSystem:
    """Sparse SPD system for one blend.

    ``pixels`` holds the target-frame ``(row, col)`` of each unknown in row
    order; ``index`` is the inverse map (-1 outside Omega).
    """

    pixels: np.ndarray
    index: np.ndarray
    matrix: sparse.csr_matrix
    rhs: np.ndarray

    @property
    def size(self) -> int:
        return self.rhs.shape[0]


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    checkpoints: tuple[float, ...] = ()


def guidance_differences(source: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Finite differences ``g(p) - g(p + d)`` for each 4-neighbour offset d.

    Entries whose neighbour falls off the raster are NaN.
    """
    g = np.asarray(source, dtype=np.float64)
    out = {}
    for dr, dc in NEIGHBOURS:
        shifted = np.full_like(g, np.nan)
        h, w = g.shape
        dst = (slice(max(0, -dr), h - max(0, dr)), slice(max(0, -dc), w - max(0, dc)))
        src = (slice(max(0, dr), h - max(0, -dr)), slice(max(0, dc), w - max(0, -dc)))
        shifted[dst] = g[src]
        out[(dr, dc)] = g - shifted
    return out


def _as_array(img) -> np.ndarray:
    return img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def placed_pixels(omega: np.ndarray, dest_offset: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Target-frame rows/cols of Omega after placement."""
    rows, cols = np.nonzero(omega)
    dx, dy = dest_offset
    return rows + int(dy), cols + int(dx)


def check_placement(omega: np.ndarray, dest_offset: tuple[int, int], target_shape: tuple[int, int]) -> None:
    """Raise BorderError unless Omega lands with a 1-pixel margin inside the target."""
    rows, cols = placed_pixels(omega, dest_offset)
    if rows.size == 0:
        raise PoissonError("empty blend region")
    h, w = target_shape
    if rows.min() < 1 or cols.min() < 1 or rows.max() > h - 2 or cols.max() > w - 2:
        raise BorderError(
            f"blend region spans rows {rows.min()}..{rows.max()}, cols {cols.min()}..{cols.max()} "
            f"after offset {tuple(dest_offset)}; it must stay 1 px inside the {h}x{w} target")


def build_system(target, source, omega: np.ndarray, dest_offset: tuple[int, int] = (0, 0),
                 guidance_scale: float = 1.0) -> PoissonSystem:
    """Assemble the Dirichlet Poisson system for blending ``source`` into ``target``.

    ``source`` and ``omega`` share the patch frame. ``guidance_scale`` multiplies
    the guidance field; 0 gives the harmonic (membrane) interpolant.
    """
    f_star = _as_array(target)
    g = _as_array(source)
    omega = np.asarray(omega, dtype=bool)
    if g.shape != omega.shape:
        raise PoissonError(f"source {g.shape} and mask {omega.shape} must share the patch frame")
    if not omega.any():
        raise PoissonError("empty blend region")
    src_rows, src_cols = np.nonzero(omega)
    ph, pw = omega.shape
    if src_rows.min() < 1 or src_cols.min() < 1 or src_rows.max() > ph - 2 or src_cols.max() > pw - 2:
        raise BorderError("blend region touches the source patch border; guidance needs one pixel of context")
    check_placement(omega, dest_offset, f_star.shape)

    rows, cols = placed_pixels(omega, dest_offset)
    n = rows.size
    index = np.full(f_star.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(n)

    diffs = guidance_differences(g)
    rhs = np.zeros(n)
    off_rows, off_cols = [], []
    for (dr, dc) in NEIGHBOURS:
        q_idx = index[rows + dr, cols + dc]
        inside = q_idx >= 0
        off_rows.append(np.nonzero(inside)[0])
        off_cols.append(q_idx[inside])
        rhs += np.where(inside, 0.0, f_star[rows + dr, cols + dc])
        rhs += guidance_scale * diffs[(dr, dc)][src_rows, src_cols]

    off_r = np.concatenate(off_rows)
    off_c = np.concatenate(off_cols)
    data = np.concatenate([np.full(n, 4.0), -np.ones(off_r.size)])
    ij = (np.concatenate([np.arange(n), off_r]), np.concatenate([np.arange(n), off_c]))
    matrix = sparse.csr_matrix((data, ij), shape=(n, n))
    pixels = np.stack([rows, cols], axis=1)
    pixels.setflags(write=False)
    index.setflags(write=False)
    rhs.setflags(write=False)
    return PoissonSystem(pixels, index, matrix, rhs)


def solve(system: PoissonSystem, tolerance: float = 1e-6, max_iter: int | None = None,
          x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Jacobi-preconditioned conjugate gradient.

    Returns the iterate with the smallest residual seen, so the reported
    checkpoints (best relative residual after each iteration) never increase.
    """
    A = system.matrix
    b = np.asarray(system.rhs, dtype=np.float64)
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    if not np.all(np.isfinite(b)):
        raise SolverError("non-finite right-hand side")
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, (0.0,))

    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    best_x = x.copy()
    best_res = float(np.linalg.norm(r)) / b_norm
    checkpoints = [best_res]
    it = 0
    while best_res > tolerance and it < max_iter:
        Ap = A @ p
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise SolverError("non-finite curvature in conjugate gradient")
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = float(np.linalg.norm(r)) / b_norm
        if not np.isfinite(res):
            raise SolverError("non-finite residual in conjugate gradient")
        if res <= tolerance:
            # guard against drift in the recursive residual
            r = b - A @ x
            res = float(np.linalg.norm(r)) / b_norm
        if res < best_res:
            best_res = res
            best_x = x.copy()
        checkpoints.append(best_res)
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    final_res = float(np.linalg.norm(b - A @ best_x)) / b_norm
    report = SolveReport(it, final_res, final_res <= tolerance, tuple(checkpoints))
    return best_x, report


def clone_values(target, source_patch, patch_mask: np.ndarray, dest_offset: tuple[int, int] = (0, 0),
                 tolerance: float = 1e-6, max_iter: int | None = None,
                 guidance_scale: float = 1.0) -> tuple[np.ndarray, SolveReport]:
    """Full-size unclamped composite: target outside Omega, Poisson solution inside."""
    f_star = _as_array(target)
    system = build_system(f_star, source_patch, patch_mask, dest_offset, guidance_scale)
    values, report = solve(system, tolerance, max_iter)
    out = f_star.copy()
    out[system.pixels[:, 0], system.pixels[:, 1]] = values
    return out, report


def seamless_clone(target: GrayImage, source_patch: GrayImage, patch_mask: np.ndarray,
                   dest_offset: tuple[int, int] = (0, 0), tolerance: float = 1e-6,
                   max_iter: int | None = None) -> GrayImage:
    """Blend the masked part of ``source_patch`` into ``target`` at ``dest_offset``.

    Only Omega pixels change; they are clamped to [0, 1]. Every other pixel is
    copied bit-for-bit from the target.
    """
    raw, _ = clone_values(target, source_patch, patch_mask, dest_offset, tolerance, max_iter)
    rows, cols = placed_pixels(np.asarray(patch_mask, dtype=bool), dest_offset)
    out = target.data.copy()
    out[rows, cols] = np.clip(raw[rows, cols], 0.0, 1.0)
    return GrayImage(out)


def naive_paste(target: GrayImage, source_patch: GrayImage, patch_mask: np.ndarray,
                dest_offset: tuple[int, int] = (0, 0)) -> GrayImage:
    """Copy the masked source pixels verbatim; the no-blending baseline."""
    mask = np.asarray(patch_mask, dtype=bool)
    check_placement(mask, dest_offset, target.shape)
    rows, cols = placed_pixels(mask, dest_offset)
    src_rows, src_cols = np.nonzero(mask)
    out = target.data.copy()
    out[rows, cols] = source_patch.data[src_rows, src_cols]
    return GrayImage(out)
