"""Mesh geometry, surface containers, and the quote projection operator.

The calibration works on a uniform rectangular mesh in (tau, y), where tau is
time to maturity in years and y = log(K / S0) is log-moneyness.  All surface
fields (local variance a = sigma^2 / 2, call prices u) are stored as matrices
indexed [time level, space node].  Everything here is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# Minimum admissible local variance (1/years).  Positivity tends to hold on
# its own during calibration, but iterates are clamped here anyway so the
# forward PDE stays uniformly parabolic under numerical undershoot.
A_FLOOR = 1e-6


class MeshError(ValueError):
    """Mesh construction arguments are missing, non-finite, or inconsistent."""


class ObservationError(ValueError):
    """Quote set is empty, duplicated, or falls outside the mesh."""


def _frozen_array(values, shape=None) -> np.ndarray:
    out = np.array(values, dtype=float)
    if shape is not None and out.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MeshSpec:
    """Uniform rectangular mesh covering [0, t_max] x [l_y, r_y].

    Nodes sit at (i * dtau, l_y + j * dy) for i = 0..m_tau+1 and
    j = 0..m_y+1.  The counts m_tau, m_y are the *interior* node counts:
    (m_tau + 1) * dtau == t_max and (m_y + 1) * dy == r_y - l_y.
    """

    dtau: float
    dy: float
    l_y: float
    r_y: float
    t_max: float
    m_tau: int
    m_y: int

    @property
    def n_levels(self) -> int:
        """Number of time levels, including tau = 0 and tau = t_max."""
        return self.m_tau + 2

    @property
    def n_space(self) -> int:
        """Number of space nodes, including both boundaries."""
        return self.m_y + 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_levels, self.n_space)

    @property
    def size(self) -> int:
        return self.n_levels * self.n_space

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_levels)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.l_y, self.r_y, self.n_space)

    def flat_index(self, i, j):
        """Flat (C-order) index of node (i, j); used by sparse operators."""
        return np.asarray(i) * self.n_space + np.asarray(j)

    def contains(self, tau: float, y: float, tol: float = 1e-12) -> bool:
        pad_t = tol * max(1.0, self.t_max)
        pad_y = tol * max(1.0, self.r_y - self.l_y)
        return (-pad_t <= tau <= self.t_max + pad_t) and (
            self.l_y - pad_y <= y <= self.r_y + pad_y
        )


def _interval_count(span: float, step: float, minimum: int) -> int:
    # Round up so the realized step never exceeds the requested one, with a
    # relative guard so 0.5 / 0.005 does not spuriously ceil to 101.
    raw = span / step
    nearest = round(raw)
    if abs(raw - nearest) <= 1e-9 * max(1.0, abs(raw)):
        n = int(nearest)
    else:
        n = int(math.ceil(raw))
    return max(n, minimum)


def build_mesh(dtau: float, dy: float, l_y: float, r_y: float, t_max: float) -> MeshSpec:
    """Construct a MeshSpec from requested steps and domain bounds.

    Interval counts are rounded up and the exact steps recomputed, so meshes
    are deterministic across platforms and the realized steps never exceed
    the requested ones.  The space direction keeps at least one interior
    node so the time-stepping system is never empty.
    """
    for name, value in (("dtau", dtau), ("dy", dy), ("t_max", t_max)):
        if not np.isfinite(value) or value <= 0:
            raise MeshError(f"{name} must be finite and positive, got {value!r}")
    for name, value in (("l_y", l_y), ("r_y", r_y)):
        if not np.isfinite(value):
            raise MeshError(f"{name} must be finite, got {value!r}")
    if not l_y < 0 < r_y:
        raise MeshError(f"domain must satisfy l_y < 0 < r_y, got l_y={l_y}, r_y={r_y}")

    n_t = _interval_count(t_max, dtau, minimum=1)
    n_y = _interval_count(r_y - l_y, dy, minimum=2)
    return MeshSpec(
        dtau=t_max / n_t,
        dy=(r_y - l_y) / n_y,
        l_y=l_y,
        r_y=r_y,
        t_max=t_max,
        m_tau=n_t - 1,
        m_y=n_y - 1,
    )


@dataclass(frozen=True)
class VarianceSurface:
    """Nodal local-variance field a = sigma^2 / 2 on a mesh (1/years)."""

    mesh: MeshSpec
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values, self.mesh.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("variance surface contains non-finite values")
        if np.any(values < A_FLOOR):
            raise ValueError(
                f"variance surface violates the positivity floor {A_FLOOR}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, mesh: MeshSpec, level: float) -> "VarianceSurface":
        return cls(mesh, np.full(mesh.shape, float(level)))

    @classmethod
    def from_sigma(cls, mesh: MeshSpec, sigma_fn) -> "VarianceSurface":
        """Inject a volatility function sigma(tau, y) as a = sigma^2 / 2."""
        tt, yy = np.meshgrid(mesh.taus, mesh.ys, indexing="ij")
        sig = np.asarray(sigma_fn(tt, yy), dtype=float)
        return cls(mesh, np.maximum(0.5 * sig**2, A_FLOOR))

    def sigma(self) -> np.ndarray:
        """Local volatility sqrt(2 a) (1/sqrt(years))."""
        return np.sqrt(2.0 * self.values)


@dataclass(frozen=True)
class PriceSurface:
    """Discrete call-price field u on a mesh (currency units).

    Produced by the forward solver, which guarantees the payoff row at
    tau = 0 and the Dirichlet boundary columns; this container only checks
    shape and finiteness so surfaces can round-trip through files.
    """

    mesh: MeshSpec
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values, self.mesh.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("price surface contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ObservationSet:
    """Scarce quotes at (tau, y) locations, with y relative to s0_ref.

    bid / ask / volume are optional per quote; missing entries are NaN.
    Duplicate (tau, y) pairs are rejected: they would make the misfit
    double-count a location.
    """

    tau: np.ndarray
    y: np.ndarray
    price: np.ndarray
    s0_ref: float
    bid: np.ndarray = None
    ask: np.ndarray = None
    volume: np.ndarray = None

    def __post_init__(self):
        tau = _frozen_array(self.tau)
        n = tau.size
        if n < 1:
            raise ObservationError("observation set must contain at least one quote")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "y", _frozen_array(self.y, (n,)))
        object.__setattr__(self, "price", _frozen_array(self.price, (n,)))
        for name in ("bid", "ask", "volume"):
            arr = getattr(self, name)
            arr = np.full(n, np.nan) if arr is None else np.asarray(arr, dtype=float)
            object.__setattr__(self, name, _frozen_array(arr, (n,)))
        if not (np.isfinite(self.s0_ref) and self.s0_ref > 0):
            raise ObservationError(f"s0_ref must be positive, got {self.s0_ref!r}")
        if np.any(~np.isfinite(tau)) or np.any(tau <= 0):
            raise ObservationError("all quote maturities must be finite and positive")
        if np.any(~np.isfinite(self.y)) or np.any(~np.isfinite(self.price)):
            raise ObservationError("quote locations and prices must be finite")
        pairs = np.column_stack([tau, self.y])
        if np.unique(pairs, axis=0).shape[0] != n:
            raise ObservationError("duplicate (tau, y) quote locations are forbidden")

    def __len__(self) -> int:
        return self.tau.size

    def strikes(self) -> np.ndarray:
        return self.s0_ref * np.exp(self.y)


def _axis_weights(x: float, step: float, n_intervals: int, snap_tol: float = 1e-9):
    """Bracketing index and fractional weight along one uniform axis."""
    f = x / step
    i0 = int(math.floor(f))
    i0 = min(max(i0, 0), n_intervals)
    w = f - i0
    if w < snap_tol:
        w = 0.0
    elif w > 1.0 - snap_tol:
        i0 += 1
        w = 0.0
        if i0 > n_intervals:
            i0 = n_intervals
            w = 1.0
    return i0, w


@dataclass(frozen=True)
class ObservationOperator:
    """Bilinear projection of a price surface onto quote locations.

    Each row holds at most four nonnegative weights summing to one; stored
    as an l x (grid size) sparse matrix over C-order flattened surfaces.
    """

    mesh: MeshSpec
    matrix: sp.csr_matrix

    @property
    def n_quotes(self) -> int:
        return self.matrix.shape[0]

    def apply(self, u: PriceSurface) -> np.ndarray:
        if u.mesh != self.mesh:
            raise ObservationError("price surface mesh does not match the operator")
        return self.matrix @ u.values.ravel()

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        """Project a raw grid array (used by adjoint and ensemble code)."""
        return self.matrix @ np.asarray(values, dtype=float).ravel()

    def row_entries(self, k: int):
        """(flat node index, weight) pairs of row k, for inspection in tests."""
        row = self.matrix.getrow(k)
        return list(zip(row.indices.tolist(), row.data.tolist()))


def build_observation_operator(mesh: MeshSpec, obs: ObservationSet) -> ObservationOperator:
    """Build the bilinear interpolation operator for a quote set.

    Quotes must lie inside the mesh rectangle; ingestion is responsible for
    dropping strays, so an out-of-mesh quote here is an error.
    """
    rows, cols, vals = [], [], []
    for k in range(len(obs)):
        tau_k, y_k = obs.tau[k], obs.y[k]
        if not mesh.contains(tau_k, y_k):
            raise ObservationError(
                f"quote {k} at (tau={tau_k}, y={y_k}) lies outside the mesh"
            )
        i0, wt = _axis_weights(tau_k, mesh.dtau, mesh.m_tau + 1)
        j0, wy = _axis_weights(y_k - mesh.l_y, mesh.dy, mesh.m_y + 1)
        for di, wi in ((0, 1.0 - wt), (1, wt)):
            for dj, wj in ((0, 1.0 - wy), (1, wy)):
                w = wi * wj
                if w > 0.0:
                    rows.append(k)
                    cols.append(mesh.flat_index(i0 + di, j0 + dj))
                    vals.append(w)
    matrix = sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(obs), mesh.size), dtype=float
    )
    return ObservationOperator(mesh=mesh, matrix=matrix)
