"""Uneven two-hemisphere shell: radial surface law, mass properties, meshing.

The shell is a smooth radial surface rho(n) = R * (1 + eps * B(n)) around the
motor axis. B combines an odd latitude taper with a cosine azimuth pattern, so
each hemisphere carries one bulged and one dented side and the two hemispheres
are related by the half-turn-plus-mirror symmetry (equivalently the antipodal
map n -> -n leaves rho unchanged).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .mathutil import orthonormal_tangents


class ShellGeometryError(ValueError):
    """Invalid shell parameters or degenerate generated mesh."""


@dataclass(frozen=True)
class ShellModel:
    """Parametric uneven shell plus the lumped pendulum it carries.

    base_radius     mean radius R in metres
    bulge_amplitude eps, fraction of R, |eps| < 1
    taper_exponent  shapes how the bulge fades toward poles and equator
    axis            motor axis in the body frame (unit)
    mesh_resolution latitude ring count (longitude uses twice as many)
    """

    base_radius: float = 0.10
    bulge_amplitude: float = 0.08
    taper_exponent: float = 1.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    mesh_resolution: int = 64
    shell_mass: float = 0.5
    pendulum_mass: float = 0.3
    pendulum_arm: float = 0.05

    def __post_init__(self):
        if self.base_radius <= 0.0:
            raise ShellGeometryError("base_radius must be positive")
        if abs(self.bulge_amplitude) >= 1.0:
            raise ShellGeometryError("|bulge_amplitude| must be < 1 so rho stays positive")
        if self.taper_exponent < 0.0:
            raise ShellGeometryError("taper_exponent must be >= 0")
        if self.mesh_resolution < 8:
            raise ShellGeometryError("mesh_resolution must be >= 8")
        if self.shell_mass <= 0.0 or self.pendulum_mass < 0.0 or self.pendulum_arm < 0.0:
            raise ShellGeometryError("masses must be positive (pendulum may be zero)")
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ShellGeometryError("axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        a1, a2 = orthonormal_tangents(self.axis)
        object.__setattr__(self, "_a1", a1)
        object.__setattr__(self, "_a2", a2)
        object.__setattr__(self, "_taper_scale", 1.0 / self._taper_norm())

    # -- surface ------------------------------------------------------------

    def _taper_norm(self) -> float:
        # peak of |c (1-c^2)^(tau/2)| over c in [-1, 1] sits at c* = 1/sqrt(1+tau)
        tau = self.taper_exponent
        c_star = 1.0 / math.sqrt(1.0 + tau)
        return c_star * (1.0 - c_star * c_star) ** (tau / 2.0)

    def bulge_pattern(self, n: np.ndarray) -> np.ndarray:
        """B(n) in [-1, 1] for unit directions n, shape (..., 3) -> (...)."""
        n = np.asarray(n, dtype=float)
        c = n @ self.axis
        t2 = np.clip(1.0 - c * c, 1e-30, None)
        taper = c * t2 ** (self.taper_exponent / 2.0) * self._taper_scale
        # |n . a1| <= sqrt(t2) analytically, so the clipped floor only guards
        # the pole roundoff case where taper vanishes anyway
        cos_phi = (n @ self._a1) / np.sqrt(t2)
        return taper * cos_phi

    def radial(self, n: np.ndarray) -> np.ndarray | float:
        """Surface radius rho(n) along unit direction n (body frame)."""
        n = np.asarray(n, dtype=float)
        norms = np.linalg.norm(n, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ShellGeometryError("radial() requires unit directions (|n| = 1 within 1e-9)")
        rho = self.base_radius * (1.0 + self.bulge_amplitude * self.bulge_pattern(n))
        return float(rho) if np.ndim(rho) == 0 else rho

    def radial_unchecked(self, n: np.ndarray) -> np.ndarray:
        """Same as radial() for callers that guarantee unit input (hot path)."""
        return self.base_radius * (1.0 + self.bulge_amplitude * self.bulge_pattern(n))

    def offset_symmetry_map(self, n: np.ndarray) -> np.ndarray:
        """The hemisphere-joining map: rotate pi about axis, then mirror across
        the plane perpendicular to the axis. rho is invariant under it."""
        n = np.asarray(n, dtype=float)
        c = n @ self.axis
        axial = np.multiply.outer(c, self.axis) if np.ndim(c) else c * self.axis
        perp = n - axial
        rotated = -perp + axial  # half turn about axis
        return rotated - 2.0 * axial  # mirror across equator plane

    def direction_grid(self, n_lat: int, n_lon: int) -> np.ndarray:
        """Unit directions on a latitude/longitude grid about the shell axis,
        poles included, shape (n_lat*n_lon + 2, 3)."""
        a1, a2 = self._a1, self._a2
        colat = np.pi * (np.arange(1, n_lat + 1)) / (n_lat + 1)
        lon = 2.0 * np.pi * np.arange(n_lon) / n_lon
        ct, st = np.cos(colat), np.sin(colat)
        cl, sl = np.cos(lon), np.sin(lon)
        dirs = (
            np.multiply.outer(np.outer(st, cl).ravel(), a1)
            + np.multiply.outer(np.outer(st, sl).ravel(), a2)
            + np.multiply.outer(np.outer(ct, np.ones(n_lon)).ravel(), self.axis)
        )
        return np.vstack([dirs, self.axis, -self.axis])


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) body frame
    faces: np.ndarray  # (F, 3) int indices, outward winding

    @property
    def face_normals(self) -> np.ndarray:
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        return n / lengths

    @property
    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    def edge_count(self) -> int:
        e = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return len(np.unique(e, axis=0))


@dataclass(frozen=True)
class MassProperties:
    total_mass: float
    shell_com: np.ndarray  # body frame, m
    shell_inertia: np.ndarray  # 3x3 about the shell centroid, body frame
    pendulum_mass: float
    pendulum_arm: float


def build_mesh(shell: ShellModel, resolution: int | None = None) -> TriangleMesh:
    """Watertight latitude/longitude triangulation of the shell surface."""
    res = shell.mesh_resolution if resolution is None else resolution
    if res < 8:
        raise ShellGeometryError("mesh resolution must be >= 8")
    n_lat, n_lon = res, 2 * res

    a1, a2 = orthonormal_tangents(shell.axis)
    colat = np.pi * np.arange(1, n_lat) / n_lat
    lon = 2.0 * np.pi * np.arange(n_lon) / n_lon
    st, ct = np.sin(colat), np.cos(colat)
    cl, sl = np.cos(lon), np.sin(lon)

    ring_dirs = (
        np.einsum("i,j,k->ijk", st, cl, a1)
        + np.einsum("i,j,k->ijk", st, sl, a2)
        + np.einsum("i,j,k->ijk", ct, np.ones(n_lon), shell.axis)
    ).reshape(-1, 3)
    dirs = np.vstack([shell.axis, ring_dirs, -shell.axis])
    radii = shell.radial_unchecked(dirs)
    vertices = dirs * radii[:, None]

    top, bottom = 0, len(vertices) - 1

    def ring(i: int, j: int) -> int:
        return 1 + i * n_lon + (j % n_lon)

    faces: list[tuple[int, int, int]] = []
    for j in range(n_lon):
        faces.append((top, ring(0, j), ring(0, j + 1)))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            v00, v01 = ring(i, j), ring(i, j + 1)
            v10, v11 = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((v00, v10, v11))
            faces.append((v00, v11, v01))
    for j in range(n_lon):
        faces.append((bottom, ring(n_lat - 2, j + 1), ring(n_lat - 2, j)))

    mesh = TriangleMesh(vertices=vertices, faces=np.asarray(faces, dtype=np.int64))
    min_area = 1e-12 * shell.base_radius**2
    if np.any(mesh.face_areas < min_area):
        raise ShellGeometryError("degenerate mesh: near-zero-area triangles")
    return mesh


def mass_properties(shell: ShellModel) -> MassProperties:
    """Thin-surface uniform-density mass properties by triangle quadrature.

    Inertia uses the edge-midpoint rule per flat triangle (exact for the
    quadratic integrand), so the only error is surface faceting.
    """
    mesh = build_mesh(shell)
    p = mesh.vertices[mesh.faces]
    areas = mesh.face_areas
    total_area = areas.sum()
    masses = shell.shell_mass * areas / total_area

    centroids = p.mean(axis=1)
    com = (masses[:, None] * centroids).sum(axis=0) / shell.shell_mass

    mids = 0.5 * (p + np.roll(p, -1, axis=1))  # three edge midpoints per face
    w = np.repeat(masses / 3.0, 3)
    q = mids.reshape(-1, 3)
    r2 = np.einsum("ij,ij->i", q, q)
    inertia_origin = np.eye(3) * float((w * r2).sum()) - np.einsum("i,ij,ik->jk", w, q, q)

    shift = np.eye(3) * float(com @ com) - np.outer(com, com)
    inertia_com = inertia_origin - shell.shell_mass * shift
    inertia_com = 0.5 * (inertia_com + inertia_com.T)

    eigvals = np.linalg.eigvalsh(inertia_com)
    if np.any(eigvals <= 0.0):
        raise ShellGeometryError("shell inertia is not positive definite")

    return MassProperties(
        total_mass=shell.shell_mass + shell.pendulum_mass,
        shell_com=com,
        shell_inertia=inertia_com,
        pendulum_mass=shell.pendulum_mass,
        pendulum_arm=shell.pendulum_arm,
    )


def write_stl(mesh: TriangleMesh, path: str) -> None:
    """Binary little-endian STL with the standard 80-byte header."""
    header = b"rocksim shell mesh".ljust(80, b"\0")
    normals = mesh.face_normals.astype("<f4")
    tris = mesh.vertices[mesh.faces].astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<I", len(mesh.faces)))
        record = np.zeros(
            len(mesh.faces),
            dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")],
        )
        record["n"] = normals
        record["v"] = tris
        fh.write(record.tobytes())
