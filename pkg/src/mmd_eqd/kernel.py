"""Second-order gradient kernel of the squared MMD between two functionals.

For two mappings T, U with conditional gradients D^T, D^U the pairwise kernel is

    [2 (t - u)'(du - dt) + 1 - 2 dt'(2 (t - u)(t - u)' - I) du] * exp(-|t - u|^2)

evaluated at t = T(o1), dt = D^T(o1), u = U(o2), du = D^U(o2).  The combined
kernel used by the test statistic is RR - RS - SR + SS.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ValidationError


class DimensionMismatch(ValidationError):
    pass


class IndexOutOfRange(IndexError):
    pass


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionMismatch(f"{name} must be an n-vector or an (n, d) matrix")
    return x


@dataclass(frozen=True, eq=False)
class FunctionalEvaluations:
    """R, S and their conditional gradients evaluated at each observation.

    All four arrays are (n, d).  ``bound_b`` is the declared range bound on
    R and S; ``gradient_bound`` optionally declares one for the gradients.
    """

    r: np.ndarray
    s: np.ndarray
    dr: np.ndarray
    ds: np.ndarray
    bound_b: float = np.inf
    gradient_bound: float = np.inf

    def __post_init__(self):
        arrays = {}
        for name in ("r", "s", "dr", "ds"):
            arr = _as_matrix(getattr(self, name), name)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            arrays[name] = arr
        shapes = {a.shape for a in arrays.values()}
        if len(shapes) != 1:
            raise DimensionMismatch(f"r, s, dr, ds shapes differ: {sorted(shapes)}")
        if not self.bound_b > 0:
            raise ValidationError("bound_b must be positive")
        tol = 1e-12 * max(1.0, self.bound_b) if np.isfinite(self.bound_b) else 0.0
        for name in ("r", "s"):
            if np.any(np.abs(arrays[name]) > self.bound_b + tol):
                raise ValidationError(f"|{name}| exceeds bound_b={self.bound_b}")
        for name in ("dr", "ds"):
            if np.any(np.abs(arrays[name]) > self.gradient_bound):
                raise ValidationError(f"|{name}| exceeds gradient_bound={self.gradient_bound}")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def d(self) -> int:
        return self.r.shape[1]

    def rescaled(self, bandwidth: float) -> "FunctionalEvaluations":
        """Evaluations of R/h and S/h, i.e. the Gaussian kernel with bandwidth h."""
        if not bandwidth > 0:
            raise ValidationError("bandwidth must be positive")
        c = 1.0 / bandwidth
        return FunctionalEvaluations(
            self.r * c, self.s * c, self.dr * c, self.ds * c,
            bound_b=self.bound_b * c, gradient_bound=self.gradient_bound * c,
        )

    def subset(self, idx) -> "FunctionalEvaluations":
        idx = np.asarray(idx)
        return FunctionalEvaluations(self.r[idx], self.s[idx], self.dr[idx], self.ds[idx],
                                     self.bound_b, self.gradient_bound)


def gamma_tu(t1, u2, dt1, du2) -> float | np.ndarray:
    """Kernel value for one (T at o1, U at o2) pair.

    Inputs are d-vectors (or scalars for d=1); leading axes broadcast, so
    arrays of shape (..., d) give an array of shape (...).
    """
    t1, u2, dt1, du2 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (t1, u2, dt1, du2))
    if len({v.shape[-1] for v in (t1, u2, dt1, du2)}) != 1:
        raise DimensionMismatch("t1, u2, dt1, du2 must share the same dimension d")
    diff = t1 - u2
    lin = np.sum(diff * (du2 - dt1), axis=-1)
    quad = 2.0 * np.sum(dt1 * diff, axis=-1) * np.sum(diff * du2, axis=-1) - np.sum(dt1 * du2, axis=-1)
    out = (2.0 * lin + 1.0 - 2.0 * quad) * np.exp(-np.sum(diff * diff, axis=-1))
    return float(out) if out.ndim == 0 else out


def _pair_matrix(t, u, dt, du) -> np.ndarray:
    """Matrix M[i, j] = gamma_tu(t[i], u[j], dt[i], du[j]) built from inner products."""
    t_dt = np.einsum("ij,ij->i", t, dt)[:, None]
    u_du = np.einsum("ij,ij->i", u, du)[None, :]
    t_du = t @ du.T
    dt_u = dt @ u.T
    dt_du = dt @ du.T
    # diff = t_i - u_j
    diff_du = t_du - u_du
    dt_diff = t_dt - dt_u
    lin = diff_du - dt_diff
    sq = np.einsum("ij,ij->i", t, t)[:, None] + np.einsum("ij,ij->i", u, u)[None, :] - 2.0 * (t @ u.T)
    np.maximum(sq, 0.0, out=sq)
    bracket = 2.0 * lin + 1.0 - 4.0 * dt_diff * diff_du + 2.0 * dt_du
    return bracket * np.exp(-sq)


def _pair_matrix_1d(t, u, dt, du) -> np.ndarray:
    diff = t[:, 0][:, None] - u[:, 0][None, :]
    dti = dt[:, 0][:, None]
    duj = du[:, 0][None, :]
    return (2.0 * diff * (duj - dti) + 1.0 - (4.0 * diff * diff - 2.0) * dti * duj) * np.exp(-diff * diff)


def pair_matrix(t, u, dt, du) -> np.ndarray:
    if t.shape[1] == 1:
        return _pair_matrix_1d(t, u, dt, du)
    return _pair_matrix(t, u, dt, du)


def gamma_combined(fe: FunctionalEvaluations, i: int, j: int) -> float:
    n = fe.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"indices ({i}, {j}) outside 0..{n - 1}")
    r, s, dr, ds = fe.r, fe.s, fe.dr, fe.ds
    return (gamma_tu(r[i], r[j], dr[i], dr[j])
            - gamma_tu(r[i], s[j], dr[i], ds[j])
            - gamma_tu(s[i], r[j], ds[i], dr[j])
            + gamma_tu(s[i], s[j], ds[i], ds[j]))


@dataclass(frozen=True, eq=False)
class GammaMatrix:
    """Symmetric n x n matrix of combined-kernel values.

    The diagonal is stored for V-statistic manipulations; U-statistics skip it.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionMismatch("GammaMatrix must be square")
        if not np.all(np.isfinite(v)):
            raise ValidationError("GammaMatrix contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values)

    def dump(self, path: str | Path) -> None:
        """Debug dump: little-endian uint64 n, then n*n float64 row-major."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", self.n))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "GammaMatrix":
        raw = Path(path).read_bytes()
        (n,) = struct.unpack("<Q", raw[:8])
        return cls(np.frombuffer(raw[8:], dtype="<f8").reshape(n, n).copy())


def gamma_matrix(fe: FunctionalEvaluations) -> GammaMatrix:
    if fe.n < 2:
        raise ValidationError("need at least two observations")
    r, s, dr, ds = fe.r, fe.s, fe.dr, fe.ds
    rs = pair_matrix(r, s, dr, ds)
    # gamma_tu(s_i, r_j, ds_i, dr_j) == gamma_tu(r_j, s_i, dr_j, ds_i), so SR = RS'
    g = pair_matrix(r, r, dr, dr) + pair_matrix(s, s, ds, ds)
    g -= rs
    g -= rs.T
    g = 0.5 * (g + g.T)
    return GammaMatrix(g)


def centered_gram(g: GammaMatrix | np.ndarray) -> np.ndarray:
    """Double-centre a kernel matrix by its row, column and grand means."""
    v = g.values if isinstance(g, GammaMatrix) else np.asarray(g, dtype=float)
    if v.shape[0] < 2:
        raise ValidationError("need at least two observations")
    col_mean = v.mean(axis=0)
    row_mean = v.mean(axis=1)
    out = v - col_mean[None, :] - row_mean[:, None] + v.mean()
    return 0.5 * (out + out.T)


def gamma_tu_bound(b: float, c: float) -> float:
    """Crude bound on |gamma_tu| when |t|, |u| <= b and |dt|, |du| <= c (scalar case)."""
    return 1.0 + 4.0 * b * c + 4.0 * b * 2.0 * c + (4.0 * 4.0 * b * b + 2.0) * c * c
