"""Uniform tensor-product meshes in 1D/2D with edge topology.

Cells are numbered in C order over their axis-index tuples. Every face is
stored with a fixed orientation along the positive axis direction: the
``minus`` cell lies below the face and the ``plus`` cell above it, so the
jump is ``[w] = w|plus - w|minus`` and the normal points from minus to plus.
Periodic axes wrap their extreme faces into interior edges whose minus cell
is the last cell along the axis and whose plus cell is the first.
"""

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from pnp.core.errors import MeshError

Side = Literal["lower", "upper"]

# value(t, x) with x of shape (..., dim)
BoundaryValue = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Domain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periodic: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise MeshError("lower and upper bounds must have the same length")
        if len(self.lower) not in (1, 2):
            raise MeshError(f"only 1D and 2D domains are supported, got {self.dim}D")
        periodic = self.periodic or (False,) * self.dim
        if len(periodic) != self.dim:
            raise MeshError("periodic flags must match the number of axes")
        object.__setattr__(self, "periodic", tuple(bool(p) for p in periodic))
        for axis, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise MeshError(f"degenerate domain on axis {axis}: [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def measure(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def is_periodic(self, axis: int) -> bool:
        assert self.periodic is not None
        return self.periodic[axis]


@dataclass(frozen=True)
class Edge:
    index: int
    axis: int
    position: float
    # tangential extent, one (lo, hi) pair per remaining axis; empty in 1D
    tangential: tuple[tuple[float, float], ...]
    # cell width normal to the edge, the h_e of the DDG flux; see ``diameter``
    normal_spacing: float
    minus: int | None
    plus: int | None
    boundary_side: Side | None = None

    @property
    def kind(self) -> Literal["interior", "boundary"]:
        return "boundary" if self.boundary_side is not None else "interior"

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(len(self.tangential) + 1)
        n[self.axis] = 1.0
        return n

    @property
    def diameter(self) -> float:
        if not self.tangential:
            return 0.0
        return float(np.hypot.reduce([hi - lo for lo, hi in self.tangential]))


@dataclass(frozen=True)
class FaceTrace:
    """Which local face of ``cell`` an edge is, seen from one side."""

    cell: int
    axis: int
    side: Side

    @property
    def reference_coordinate(self) -> float:
        return -1.0 if self.side == "lower" else 1.0

    def to_reference(self, tangential: np.ndarray) -> np.ndarray:
        """Map tangential reference points of shape (q, dim-1) onto the cell."""
        tangential = np.atleast_2d(np.asarray(tangential, dtype=float))
        fixed = np.full((tangential.shape[0], 1), self.reference_coordinate)
        return np.concatenate(
            [tangential[:, : self.axis], fixed, tangential[:, self.axis :]], axis=1
        )


@dataclass(frozen=True)
class InteriorFaces:
    """All interior (including periodic-wrapped) faces normal to one axis."""

    axis: int
    minus: np.ndarray
    plus: np.ndarray


@dataclass(frozen=True)
class BoundaryFaces:
    axis: int
    side: Side
    cells: np.ndarray


@dataclass(frozen=True)
class Mesh:
    domain: Domain
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.counts) != self.domain.dim:
            raise MeshError("one cell count per axis is required")
        for axis, n in enumerate(self.counts):
            if int(n) != n or n < 1:
                raise MeshError(f"cell count on axis {axis} must be >= 1, got {n}")
            if self.domain.is_periodic(axis) and n < 2:
                raise MeshError(
                    f"periodic axis {axis} needs at least 2 cells to wrap"
                )
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def spacing(self) -> np.ndarray:
        return (np.subtract(self.domain.upper, self.domain.lower)) / np.array(
            self.counts
        )

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def h(self) -> float:
        """Mesh size: the cell diameter."""
        return float(np.linalg.norm(self.spacing))

    @cached_property
    def cell_index(self) -> np.ndarray:
        """Axis-index tuple of every cell, shape (n_cells, dim)."""
        grids = np.meshgrid(*(np.arange(n) for n in self.counts), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def cell_lower(self) -> np.ndarray:
        return np.asarray(self.domain.lower) + self.cell_index * self.spacing

    def cell_id(self, index: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(index).T), self.counts)

    def cell_bounds(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        lower = self.cell_lower[cell]
        return lower, lower + self.spacing

    def to_physical(self, reference: np.ndarray) -> np.ndarray:
        """Map reference points (q, dim) into every cell: (n_cells, q, dim)."""
        reference = np.asarray(reference, dtype=float)
        return (
            self.cell_lower[:, None, :]
            + 0.5 * (reference[None, :, :] + 1.0) * self.spacing[None, None, :]
        )

    @cached_property
    def interior_faces(self) -> tuple[InteriorFaces, ...]:
        families = []
        for axis in range(self.dim):
            idx = self.cell_index
            n = self.counts[axis]
            if self.domain.is_periodic(axis):
                minus_idx = idx
            else:
                minus_idx = idx[idx[:, axis] < n - 1]
            plus_idx = minus_idx.copy()
            plus_idx[:, axis] = (plus_idx[:, axis] + 1) % n
            families.append(
                InteriorFaces(
                    axis=axis,
                    minus=self.cell_id(minus_idx),
                    plus=self.cell_id(plus_idx),
                )
            )
        return tuple(families)

    @cached_property
    def boundary_faces(self) -> tuple[BoundaryFaces, ...]:
        faces = []
        for axis in range(self.dim):
            if self.domain.is_periodic(axis):
                continue
            idx = self.cell_index
            lower = idx[idx[:, axis] == 0]
            upper = idx[idx[:, axis] == self.counts[axis] - 1]
            faces.append(BoundaryFaces(axis, "lower", self.cell_id(lower)))
            faces.append(BoundaryFaces(axis, "upper", self.cell_id(upper)))
        return tuple(faces)

    @cached_property
    def edges(self) -> tuple[Edge, ...]:
        edges: list[Edge] = []

        def tangential(cell: int, axis: int) -> tuple[tuple[float, float], ...]:
            lo, hi = self.cell_bounds(cell)
            return tuple(
                (float(lo[b]), float(hi[b])) for b in range(self.dim) if b != axis
            )

        for family in self.interior_faces:
            a = family.axis
            for minus, plus in zip(family.minus, family.plus):
                position = float(self.cell_bounds(int(minus))[1][a])
                if self.cell_index[minus, a] == self.counts[a] - 1:
                    # periodic wrap face sits on the lower domain boundary
                    position = float(self.domain.lower[a])
                edges.append(
                    Edge(
                        index=len(edges),
                        axis=a,
                        position=position,
                        tangential=tangential(int(minus), a),
                        normal_spacing=float(self.spacing[a]),
                        minus=int(minus),
                        plus=int(plus),
                    )
                )
        for faces in self.boundary_faces:
            a = faces.axis
            for cell in faces.cells:
                lo, hi = self.cell_bounds(int(cell))
                edges.append(
                    Edge(
                        index=len(edges),
                        axis=a,
                        position=float(lo[a] if faces.side == "lower" else hi[a]),
                        tangential=tangential(int(cell), a),
                        normal_spacing=float(self.spacing[a]),
                        minus=None if faces.side == "lower" else int(cell),
                        plus=int(cell) if faces.side == "lower" else None,
                        boundary_side=faces.side,
                    )
                )
        return tuple(edges)

    @property
    def n_interior_edges(self) -> int:
        return sum(len(f.minus) for f in self.interior_faces)

    @property
    def n_boundary_edges(self) -> int:
        return sum(len(f.cells) for f in self.boundary_faces)


def build_mesh(domain: Domain, counts: int | tuple[int, ...]) -> Mesh:
    if isinstance(counts, (int, np.integer)):
        counts = (int(counts),) * domain.dim
    return Mesh(domain=domain, counts=tuple(counts))


def edge_trace(mesh: Mesh, edge: Edge) -> tuple[FaceTrace | None, FaceTrace | None]:
    """Local face descriptors of ``edge`` for its minus (K1) and plus (K2) cell."""
    if edge.index >= len(mesh.edges) or mesh.edges[edge.index] != edge:
        raise MeshError(f"edge {edge.index} does not belong to this mesh")
    minus = (
        FaceTrace(cell=edge.minus, axis=edge.axis, side="upper")
        if edge.minus is not None
        else None
    )
    plus = (
        FaceTrace(cell=edge.plus, axis=edge.axis, side="lower")
        if edge.plus is not None
        else None
    )
    return minus, plus


# -- boundary conditions ------------------------------------------------------


@dataclass(frozen=True)
class ZeroFlux:
    """Homogeneous natural condition: zero normal flux / zero normal derivative."""

    kind: Literal["zero_flux"] = "zero_flux"


@dataclass(frozen=True)
class Dirichlet:
    value: BoundaryValue
    kind: Literal["dirichlet"] = "dirichlet"


BoundaryCondition = ZeroFlux | Dirichlet


@dataclass(frozen=True)
class BoundarySet:
    """Boundary condition per (axis, side) face of one variable."""

    conditions: Mapping[tuple[int, Side], BoundaryCondition] = field(
        default_factory=dict
    )

    @classmethod
    def uniform(
        cls, domain: Domain, condition: BoundaryCondition | None = None
    ) -> "BoundarySet":
        condition = condition or ZeroFlux()
        return cls(
            {
                (axis, side): condition
                for axis in range(domain.dim)
                if not domain.is_periodic(axis)
                for side in ("lower", "upper")
            }
        )

    def with_faces(
        self, faces: Mapping[tuple[int, Side], BoundaryCondition]
    ) -> "BoundarySet":
        return BoundarySet({**self.conditions, **faces})

    def validate(self, domain: Domain) -> None:
        for axis, side in self.conditions:
            if axis >= domain.dim:
                raise MeshError(f"boundary condition on missing axis {axis}")
            if domain.is_periodic(axis):
                raise MeshError(
                    f"axis {axis} is periodic and has no {side} boundary face"
                )

    def condition(self, axis: int, side: Side) -> BoundaryCondition:
        try:
            return self.conditions[(axis, side)]
        except KeyError:
            raise MeshError(f"no boundary condition for axis {axis} {side}") from None

    @property
    def has_dirichlet(self) -> bool:
        return any(isinstance(c, Dirichlet) for c in self.conditions.values())
