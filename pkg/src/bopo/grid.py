"""Radial and box grids, sampled fields, norms and the fibering rescaling.

The radial grid is cell-centred in a stretched coordinate xi in [0, 1]:

    r(xi) = A (xi - c w tanh(xi / w)),

which is odd in xi, so a radial field extends evenly across the origin and
the midpoint rule is spectrally accurate there. Nodes cluster near r = 0
(spacing shrinks by the factor 1 - c) and become uniform further out. The
last six cells carry an Euler-Maclaurin end correction so that integrands
that do not vanish at ``r_max`` are still integrated to high order.

Gradients live on cell faces (a staggered, sixth-order stencil), which keeps
the discrete Dirichlet form free of odd-even null modes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from pathlib import Path

import numpy as np
from scipy import interpolate, sparse
from scipy.linalg import solveh_banded

__all__ = [
    "RadialGrid",
    "BoxGrid",
    "Field",
    "RadialField",
    "BoxField",
    "stencil_weights",
    "lp_norm",
    "dirichlet_seminorm",
    "fibering_rescale",
    "tail_fraction",
    "write_field",
    "read_field",
]

log = logging.getLogger(__name__)

GHOSTS = 3

# Bernoulli values B_{2k}(1/2) for the midpoint-rule Euler-Maclaurin series
_B_HALF = {2: -1 / 12, 4: 7 / 240, 6: -31 / 1344, 8: 127 / 3840, 10: -2555 / 33792}


def stencil_weights(offsets, lo, hi=None, deriv=0):
    """Polynomial-exact weights on ``offsets``.

    With ``deriv == 0`` the weights integrate over ``[lo, hi]``; otherwise
    they differentiate ``deriv`` times at the point ``lo``.
    """
    o = np.asarray(offsets, dtype=float)
    m = len(o)
    vander = np.vander(o, m, increasing=True).T
    if deriv == 0:
        rhs = np.array([(hi ** (k + 1) - lo ** (k + 1)) / (k + 1) for k in range(m)])
    else:
        rhs = np.array(
            [factorial(k) / factorial(k - deriv) * lo ** (k - deriv) if k >= deriv else 0.0 for k in range(m)]
        )
    return np.linalg.solve(vander, rhs)


def _midpoint_end_correction(k):
    # corrections (units of h) for the k nodes nearest the right end, ordered
    # from the boundary inwards; cancel the right-end Euler-Maclaurin terms
    y = np.arange(k) + 0.5
    rows, rhs = [], []
    for deg in range(k):
        rows.append(y**deg)
        val = 0.0
        for order, b in _B_HALF.items():
            if order - 1 == deg:
                val += -b / factorial(order) * (-1) ** deg * factorial(deg)
        rhs.append(val)
    return np.linalg.solve(np.array(rows), np.array(rhs))


def _readonly(x):
    x = np.asarray(x, dtype=float)
    x.setflags(write=False)
    return x


class RadialGrid:
    """Cell-centred radial grid on (0, r_max].

    Parameters
    ----------
    n : int
        Number of cells (and value nodes). Must be even.
    r_max : float, optional
        Outer radius, default ``40 * a``.
    a : float
        Length used to set the default outer radius.
    cluster : float
        Fraction by which the spacing at the origin is reduced (0 <= cluster < 1).
    width : float
        Width of the clustered zone in the stretched coordinate.
    """

    def __init__(self, n=2048, r_max=None, a=1.0, cluster=0.9, width=0.05):
        if n < 16 or n % 2:
            raise ValueError("n must be an even integer >= 16")
        if not 0 <= cluster < 1:
            raise ValueError("cluster must lie in [0, 1)")
        self.n = int(n)
        self.r_max = float(40.0 * a if r_max is None else r_max)
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        self.cluster = float(cluster)
        self.width = float(width)
        self._scale = self.r_max / (1 - cluster * width * np.tanh(1 / width))
        self.dxi = 1.0 / self.n

        self.xi = _readonly((np.arange(self.n) + 0.5) * self.dxi)
        self.r = _readonly(self.map(self.xi))
        self.jac = _readonly(self.map_deriv(self.xi))
        wq = np.full(self.n, self.dxi)
        wq[-6:] += self.dxi * _midpoint_end_correction(6)[::-1]
        self.weights = _readonly(4 * np.pi * self.r**2 * self.jac * wq)

        self.xi_faces = _readonly(np.arange(self.n + 1) * self.dxi)
        self.r_faces = _readonly(self.map(self.xi_faces))
        self.jac_faces = _readonly(self.map_deriv(self.xi_faces))
        wf = np.full(self.n + 1, self.dxi)
        wf[0] = wf[-1] = 0.5 * self.dxi
        self.face_weights = _readonly(4 * np.pi * self.r_faces**2 * self.jac_faces * wf)

        g = GHOSTS
        self.xi_ext = _readonly((np.arange(-g, self.n + g) + 0.5) * self.dxi)
        self.r_ext = _readonly(self.map(self.xi_ext))
        self.jac_ext = _readonly(self.map_deriv(self.xi_ext))

    # mapping -------------------------------------------------------------
    def map(self, xi):
        c, w = self.cluster, self.width
        return self._scale * (xi - c * w * np.tanh(xi / w))

    def map_deriv(self, xi):
        c, w = self.cluster, self.width
        return self._scale * (1 - c / np.cosh(xi / w) ** 2)

    def map_deriv2(self, xi):
        c, w = self.cluster, self.width
        return self._scale * 2 * c / w * np.tanh(xi / w) / np.cosh(xi / w) ** 2

    @property
    def shape(self):
        return (self.n,)

    @property
    def spacing(self):
        return float(np.max(np.diff(self.r)))

    def describe(self) -> dict:
        return {
            "kind": "radial",
            "n": self.n,
            "r_max": self.r_max,
            "cluster": self.cluster,
            "width": self.width,
        }

    def refined(self, factor=2) -> "RadialGrid":
        return RadialGrid(self.n * factor, self.r_max, cluster=self.cluster, width=self.width)

    def __eq__(self, other):
        return isinstance(other, RadialGrid) and self.describe() == other.describe()

    def __hash__(self):
        return hash(tuple(sorted(self.describe().items())))

    # sampling and extension ---------------------------------------------
    def sample(self, func) -> "RadialField":
        return RadialField(self, func(self.r))

    def extend(self, values):
        """Even reflection across r = 0 and zero extension beyond r_max."""
        g = GHOSTS
        v = np.asarray(values, dtype=float)
        out = np.zeros(v.shape[:-1] + (self.n + 2 * g,))
        out[..., g : g + self.n] = v
        out[..., :g] = v[..., g - 1 :: -1]
        return out

    # quadrature and calculus ---------------------------------------------
    def integrate(self, values):
        return float(np.dot(self.weights, values))

    @cached_property
    def derivative_matrix(self):
        """Sparse (n+1, n) matrix mapping node values to du/dr on faces."""
        offsets = np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5])
        coef = stencil_weights(offsets, 0.0, deriv=1) / self.dxi
        n = self.n
        rows, cols, vals = [], [], []
        for k in range(n + 1):
            for off, c in zip(offsets, coef):
                j = int(k + off - 0.5)  # node index of the sample at face + off
                if j < 0:
                    j = -j - 1
                if j >= n:
                    continue
                rows.append(k)
                cols.append(j)
                vals.append(c / self.jac_faces[k])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))

    def gradient(self, values):
        return self.derivative_matrix @ np.asarray(values, dtype=float)

    def dirichlet(self, values):
        """||grad u||_2^2 on the discrete field."""
        du = self.gradient(values)
        return float(np.dot(self.face_weights, du * du))

    @cached_property
    def stiffness(self):
        d = self.derivative_matrix
        return (d.T @ sparse.diags(self.face_weights) @ d).tocsr()

    def stiffness_apply(self, values):
        return self.stiffness @ np.asarray(values, dtype=float)

    @cached_property
    def _stiffness_bands(self):
        s = self.stiffness.todia()
        bw = 5
        bands = np.zeros((bw + 1, self.n))
        for k in range(bw + 1):
            diag = s.diagonal(k)
            bands[bw - k, k:] = diag
        return bands

    def sobolev_solve(self, rhs, shift=1.0):
        """Solve (S + shift * M) g = rhs with S the stiffness, M the mass."""
        bands = self._stiffness_bands.copy()
        bands[-1] += shift * self.weights
        return solveh_banded(bands, np.asarray(rhs, dtype=float), lower=False)

    def sobolev_inner(self, f, g, shift=1.0):
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        return float(f @ self.stiffness_apply(g) + shift * np.dot(self.weights, f * g))

    def outer_mask(self, fraction=0.1):
        return self.r > (1 - fraction) * self.r_max

    # rescaling -------------------------------------------------------------
    def rescale(self, values, t, method="cubic"):
        """Samples of x -> t^2 u(t x), zero beyond r_max.

        ``method`` is ``"cubic"`` (not-a-knot spline, fourth order) or
        ``"pchip"`` (monotone, about two orders less accurate on smooth data).
        """
        ext = self.extend(values)
        if method not in ("cubic", "pchip"):
            raise ValueError(f"unknown interpolation method {method!r}")
        # underflowed tails make PCHIP's harmonic mean divide by zero; harmless
        with np.errstate(all="ignore"):
            if method == "cubic":
                interp = interpolate.CubicSpline(self.r_ext, ext, extrapolate=False)
            else:
                interp = interpolate.PchipInterpolator(self.r_ext, ext, extrapolate=False)
            out = interp(t * self.r)
        return t**2 * np.nan_to_num(out, nan=0.0)


class BoxGrid:
    """Uniform periodic-layout grid on [-L, L)^3 with ``n`` points per axis."""

    def __init__(self, n=64, L=6.0):
        if n % 2 or n < 4:
            raise ValueError("n_per_axis must be even and >= 4")
        if L <= 0:
            raise ValueError("L must be positive")
        self.n = int(n)
        self.L = float(L)
        self.h = 2 * self.L / self.n
        self.x = _readonly(-self.L + self.h * np.arange(self.n))
        self.k = _readonly(2 * np.pi * np.fft.fftfreq(self.n, d=self.h))

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def spacing(self):
        return self.h

    def describe(self) -> dict:
        return {"kind": "box", "n": self.n, "L": self.L}

    def __eq__(self, other):
        return isinstance(other, BoxGrid) and self.describe() == other.describe()

    def __hash__(self):
        return hash(tuple(sorted(self.describe().items())))

    def mesh(self):
        return np.meshgrid(self.x, self.x, self.x, indexing="ij")

    def radius(self, center=(0.0, 0.0, 0.0)):
        X, Y, Z = self.mesh()
        return np.sqrt((X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2)

    def sample(self, func, center=(0.0, 0.0, 0.0)) -> "BoxField":
        return BoxField(self, func(self.radius(center)))

    @cached_property
    def weights(self):
        w = np.full(self.shape, self.h**3)
        w.setflags(write=False)
        return w

    def integrate(self, values):
        return float(self.h**3 * np.sum(values))

    @cached_property
    def k2(self):
        kx, ky, kz = np.meshgrid(self.k, self.k, self.k, indexing="ij", sparse=True)
        return kx**2 + ky**2 + kz**2

    def gradient(self, values):
        u = np.fft.fftn(values)
        kx, ky, kz = np.meshgrid(self.k, self.k, self.k, indexing="ij", sparse=True)
        return [np.real(np.fft.ifftn(1j * kk * u)) for kk in (kx, ky, kz)]

    def laplacian(self, values):
        return np.real(np.fft.ifftn(-self.k2 * np.fft.fftn(values)))

    def dirichlet(self, values):
        u = np.fft.fftn(values)
        return float(self.h**3 * np.sum(self.k2 * np.abs(u) ** 2) / values.size)

    def stiffness_apply(self, values):
        return self.h**3 * -self.laplacian(values)

    def sobolev_solve(self, rhs, shift=1.0):
        r = np.fft.fftn(np.asarray(rhs, dtype=float) / self.h**3)
        return np.real(np.fft.ifftn(r / (self.k2 + shift)))

    def sobolev_inner(self, f, g, shift=1.0):
        return float(np.sum(f * self.stiffness_apply(g)) + shift * self.h**3 * np.sum(f * g))

    def outer_mask(self, fraction=0.1):
        X, Y, Z = self.mesh()
        m = np.maximum(np.maximum(abs(X), abs(Y)), abs(Z))
        return m > (1 - fraction) * self.L

    def rescale(self, values, t, method="cubic"):
        interp = interpolate.RegularGridInterpolator(
            (self.x, self.x, self.x), values, method=method, bounds_error=False, fill_value=0.0
        )
        X, Y, Z = self.mesh()
        pts = np.stack([t * X, t * Y, t * Z], axis=-1)
        return t**2 * interp(pts)


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable samples of a real function on a grid."""

    grid: object
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values of shape {v.shape} do not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field samples must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values):
        return type(self)(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def square(self):
        return self.with_values(self.values**2)

    def is_zero(self):
        return not np.any(self.values)

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.grid.describe(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]


def _vals(x):
    return x.values if isinstance(x, Field) else x


class RadialField(Field):
    @property
    def r(self):
        return self.grid.r


class BoxField(Field):
    pass


def lp_norm(f: Field, p: float) -> float:
    """Discrete L^p norm, p in [1, inf]."""
    if not p >= 1:
        raise ValueError("p must lie in [1, inf]")
    v = np.abs(f.values)
    if np.isinf(p):
        return float(v.max(initial=0.0))
    return f.grid.integrate(v**p) ** (1.0 / p)


def dirichlet_seminorm(f: Field) -> float:
    return float(np.sqrt(f.grid.dirichlet(f.values)))


def fibering_rescale(u: Field, t: float, method: str = "cubic") -> Field:
    """Return x -> t^2 u(t x) resampled on the same grid."""
    if not t > 0:
        raise ValueError("fibering parameter t must be positive")
    if t == 1:
        return u
    return u.with_values(u.grid.rescale(u.values, t, method))


def tail_fraction(u: Field, fraction=0.1) -> float:
    """Share of the L^6 mass of ``u`` lying in the outer ``fraction`` of the grid."""
    w = u.grid.weights * u.values**6
    total = float(np.sum(w))
    if total == 0:
        return 0.0
    return float(np.sum(w[u.grid.outer_mask(fraction)]) / total)


def check_tail(u: Field, limit=1e-6, fraction=0.1) -> float:
    frac = tail_fraction(u, fraction)
    if frac > limit:
        log.warning("tail mass fraction %.3e exceeds %.1e; the grid may be too small", frac, limit)
    return frac


# serialization -------------------------------------------------------------
def _atomic_write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_field(f: Field, path, header: dict | None = None) -> Path:
    """Radial fields go to CSV (``r,value``); box fields to raw float64 plus a JSON sidecar.

    ``header`` entries are written as a leading ``# key=value`` comment line
    (radial) or merged into the sidecar (box).
    """
    path = Path(path)
    header = header or {}
    if isinstance(f.grid, RadialGrid):
        lines = ["r,value"] + [f"{ri!r},{vi!r}" for ri, vi in zip(f.grid.r.tolist(), f.values.tolist())]
        if header:
            lines.insert(0, "# " + " ".join(f"{k}={v}" for k, v in sorted(header.items())))
        _atomic_write_text(path, "\n".join(lines) + "\n")
    else:
        tmp = path.with_name(path.name + ".tmp")
        np.ascontiguousarray(f.values, dtype="<f8").tofile(tmp)
        os.replace(tmp, path)
        meta = dict(header, **f.grid.describe(), dtype="<f8", order="C", shape=list(f.grid.shape))
        _atomic_write_text(path.with_name(path.name + ".json"), json.dumps(meta, sort_keys=True, indent=1))
    return path


def read_field(path, grid=None) -> Field:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        g = grid or BoxGrid(meta["n"], meta["L"])
        vals = np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])
        return BoxField(g, vals)
    rows = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    data = np.loadtxt(rows[1:], delimiter=",", ndmin=2)
    if grid is None:
        raise ValueError("reading a radial CSV needs the grid it was written on")
    if data.shape[0] != grid.n or not np.allclose(data[:, 0], grid.r, rtol=1e-14, atol=0):
        raise ValueError("CSV radii do not match the supplied grid")
    return RadialField(grid, data[:, 1])
