"""Synthetic communication kernels, fully annotated with regions.

All four kernels are pure per-rank programs over the Communicator interface:
halo3d (face exchange on a 3D rank grid), sweep (octant wavefront with
upwind/downwind dependencies), amg_vcycle (multigrid hierarchy with per-level
labels and a coarse-level redistribution), and lag_step (strong-scaling
timestep loop with collectives).  Exchanges are nonblocking throughout, so no
kernel can deadlock under rendezvous blocking-send semantics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

from .sim import Communicator

AXES = (0, 1, 2)
DIRS = (-1, 1)

# Tag layout keeps message classes in disjoint ranges; FIFO per
# (src, dst, tag) then guarantees in-order matching within a class.
_SWEEP_TAG_BASE = 16
_MATVEC_TAG_BASE = 64
_AGG_TAG = 128
_COARSE_TAG_BASE = 160


class KernelConfigError(ValueError):
    """Kernel parameters inconsistent with the grid or problem size."""


@dataclass(frozen=True)
class Grid3D:
    """3D process grid with z-major rank linearization and open boundaries."""

    px: int
    py: int
    pz: int

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.px, self.py, self.pz)

    @property
    def nranks(self) -> int:
        return self.px * self.py * self.pz

    def rank_of(self, x: int, y: int, z: int) -> int:
        return x + self.px * (y + self.py * z)

    def coords(self, rank: int) -> tuple[int, int, int]:
        x = rank % self.px
        y = (rank // self.px) % self.py
        z = rank // (self.px * self.py)
        return (x, y, z)

    def neighbor(self, rank: int, axis: int, direction: int) -> int | None:
        """Face neighbor along an axis (+1/-1), or None at the boundary."""
        c = list(self.coords(rank))
        c[axis] += direction
        if not 0 <= c[axis] < self.dims[axis]:
            return None
        return self.rank_of(*c)

    def face_neighbors(self, rank: int) -> list[tuple[int, int, int]]:
        """All (axis, direction, neighbor) triples, fixed axis-major order."""
        out = []
        for axis in AXES:
            for s in DIRS:
                nbr = self.neighbor(rank, axis, s)
                if nbr is not None:
                    out.append((axis, s, nbr))
        return out


@dataclass(frozen=True)
class KernelParams:
    """Per-rank problem shape plus the knobs shared by all kernels."""

    cells: tuple[int, int, int]
    fields_per_cell: int = 1
    element_bytes: int = 8
    iterations: int = 1
    msgs_per_neighbor: int = 36
    coarsen_min: int = 4
    timesteps: int = 5

    @classmethod
    def from_mapping(cls, cells: tuple[int, int, int], params: Mapping[str, int]) -> "KernelParams":
        for name, value in params.items():
            if value < 1:
                raise KernelConfigError(f"kernel parameter {name} must be >= 1, got {value}")
        return cls(cells=cells, **params)


def face_bytes(cells: tuple[int, int, int], axis: int, fields: int, element_bytes: int) -> int:
    """Payload of one face message: plane area orthogonal to `axis`."""
    a, b = (cells[i] for i in AXES if i != axis)
    return a * b * fields * element_bytes


def _dir_index(axis: int, direction: int) -> int:
    return axis * 2 + (1 if direction > 0 else 0)


def _halo_tag(axis: int, direction: int, iteration: int) -> int:
    return _dir_index(axis, direction) * 2 + (iteration & 1)


def halo3d(comm: Communicator, grid: Grid3D, params: KernelParams) -> None:
    """Per iteration: nonblocking face exchange with every grid neighbor."""
    neighbors = grid.face_neighbors(comm.rank)
    f, eb = params.fields_per_cell, params.element_bytes
    with comm.region("main"):
        for it in range(params.iterations):
            with comm.region("halo_exchange"):
                reqs = []
                for axis, s, nbr in neighbors:
                    # The incoming message was sent toward direction -s.
                    reqs.append(comm.irecv(nbr, _halo_tag(axis, -s, it),
                                           face_bytes(params.cells, axis, f, eb)))
                for axis, s, nbr in neighbors:
                    reqs.append(comm.isend(nbr, _halo_tag(axis, s, it),
                                           face_bytes(params.cells, axis, f, eb)))
                comm.wait_all(reqs)
            comm.compute(params.cells[0] * params.cells[1] * params.cells[2])


# Octant sweep: fixed enumeration of the 8 sweep directions.
OCTANTS: tuple[tuple[int, int, int], ...] = tuple(itertools.product(DIRS, DIRS, DIRS))


def _sweep_tag(octant_index: int, axis: int, iteration: int) -> int:
    return _SWEEP_TAG_BASE + (octant_index * 3 + axis) * 2 + (iteration & 1)


def sweep(comm: Communicator, grid: Grid3D, params: KernelParams) -> None:
    """Octant wavefront: per phase, drain all upwind messages before sending
    downwind.  The dependency graph per octant is a DAG rooted at the octant's
    origin corner, so eager sends keep the wavefront deadlock-free."""
    rank = comm.rank
    f, eb = params.fields_per_cell, params.element_bytes
    m = params.msgs_per_neighbor
    with comm.region("main"):
        for it in range(params.iterations):
            with comm.region("sweep_comm"):
                for oi, octant in enumerate(OCTANTS):
                    reqs = []
                    for axis in AXES:
                        upwind = grid.neighbor(rank, axis, -octant[axis])
                        if upwind is None:
                            continue
                        fb = face_bytes(params.cells, axis, f, eb)
                        tag = _sweep_tag(oi, axis, it)
                        reqs.extend(comm.irecv(upwind, tag, fb) for _ in range(m))
                    comm.wait_all(reqs)
                    sends = []
                    for axis in AXES:
                        downwind = grid.neighbor(rank, axis, octant[axis])
                        if downwind is None:
                            continue
                        fb = face_bytes(params.cells, axis, f, eb)
                        tag = _sweep_tag(oi, axis, it)
                        sends.extend(comm.isend(downwind, tag, fb) for _ in range(m))
                    comm.wait_all(sends)
            with comm.region("solve"):
                comm.compute(params.cells[0] * params.cells[1] * params.cells[2])


def amg_fine_levels(cells: tuple[int, int, int], coarsen_min: int) -> int:
    """Number of fine levels: halve per-rank dims until one would drop below
    the coarsening floor."""
    count = 0
    while min(c >> count for c in cells) >= coarsen_min:
        count += 1
    return count


def amg_redistributes(grid: Grid3D) -> bool:
    """A coarse level is squeezed onto one rank per 2x2x2 block once the run
    is large enough for coarse-level fan-in to matter."""
    return grid.nranks >= 64 and all(d % 2 == 0 for d in grid.dims)


def _matvec_tag(axis: int, direction: int, iteration: int) -> int:
    return _MATVEC_TAG_BASE + _dir_index(axis, direction) * 2 + (iteration & 1)


def _coarse_tag(axis: int, direction: int, iteration: int) -> int:
    return _COARSE_TAG_BASE + _dir_index(axis, direction) * 2 + (iteration & 1)


def amg_vcycle(comm: Communicator, grid: Grid3D, params: KernelParams) -> None:
    """Multigrid cycle: per level, a small MatVecComm setup exchange followed
    by a face exchange at halved dims; the level past the coarsening floor is
    redistributed onto the lowest rank of each 2x2x2 block, which collects one
    aggregation message from each of its 7 retiring ranks."""
    rank = comm.rank
    cells = params.cells
    f, eb = params.fields_per_cell, params.element_bytes
    c_min = params.coarsen_min

    fine_levels = amg_fine_levels(cells, c_min)
    if fine_levels == 0:
        raise KernelConfigError(
            f"per-rank dims {cells} already below coarsen_min {c_min}")
    redist = amg_redistributes(grid)
    depth = fine_levels if redist else fine_levels - 1
    for axis, c in enumerate(cells):
        if c % (1 << depth) != 0:
            raise KernelConfigError(
                f"per-rank dim {c} on axis {axis} not divisible by 2 through "
                f"{depth} coarsenings (coarsen_min {c_min})")

    neighbors = grid.face_neighbors(rank)

    x, y, z = grid.coords(rank)
    survivor = (x % 2 == 0) and (y % 2 == 0) and (z % 2 == 0)
    block_root = grid.rank_of(x - x % 2, y - y % 2, z - z % 2)

    with comm.region("main"):
        # AMG-style halo exchange reuses persistent requests across cycles;
        # one request set per fine level, built once.
        halo_reqs: list[list] = []
        for lvl in range(fine_levels):
            lvl_cells = tuple(c >> lvl for c in cells)
            reqs = []
            for axis, s, nbr in neighbors:
                fb = face_bytes(lvl_cells, axis, f, eb)
                reqs.append(comm.recv_init(nbr, _dir_index(axis, -s), fb))
            for axis, s, nbr in neighbors:
                fb = face_bytes(lvl_cells, axis, f, eb)
                reqs.append(comm.send_init(nbr, _dir_index(axis, s), fb))
            halo_reqs.append(reqs)

        for it in range(params.iterations):
            for lvl in range(fine_levels):
                label = str(lvl)
                with comm.region("MatVecComm", level=label):
                    reqs = [comm.irecv(nbr, _matvec_tag(axis, -s, it), 64)
                            for axis, s, nbr in neighbors]
                    reqs += [comm.isend(nbr, _matvec_tag(axis, s, it), 64)
                             for axis, s, nbr in neighbors]
                    comm.wait_all(reqs)
                with comm.region("halo_exchange", level=label):
                    comm.start_all(halo_reqs[lvl])
                    comm.wait_all(halo_reqs[lvl])

            if redist:
                _redistributed_level(comm, grid, params, fine_levels, survivor, block_root, it)

            comm.compute(cells[0] * cells[1] * cells[2])


def _redistributed_level(comm: Communicator, grid: Grid3D, params: KernelParams,
                         level: int, survivor: bool, block_root: int, iteration: int) -> None:
    rank = comm.rank
    cells = params.cells
    f, eb = params.fields_per_cell, params.element_bytes
    label = str(level)
    coarse_cells = tuple(c >> level for c in cells)
    agg_bytes = coarse_cells[0] * coarse_cells[1] * coarse_cells[2] * f * eb

    if not survivor:
        # Retiring ranks hand their coarse block to the block's survivor.
        with comm.region("halo_exchange", level=label):
            comm.wait(comm.isend(block_root, _AGG_TAG, agg_bytes))
        return

    # Surviving ranks sit on even coordinates; their peers at this level are
    # the survivors two steps away in the original grid.
    x, y, z = grid.coords(rank)
    coarse_neighbors = []
    for axis in AXES:
        for s in DIRS:
            c = [x, y, z]
            c[axis] += 2 * s
            if 0 <= c[axis] < grid.dims[axis]:
                coarse_neighbors.append((axis, s, grid.rank_of(*c)))

    # The survivor's level-local block reassembles its 2x2x2 neighborhood.
    merged = tuple(c * 2 for c in coarse_cells)
    retirees = [grid.rank_of(x + dx, y + dy, z + dz)
                for dx, dy, dz in itertools.product((0, 1), repeat=3)
                if (dx, dy, dz) != (0, 0, 0)]

    with comm.region("MatVecComm", level=label):
        reqs = [comm.irecv(nbr, _matvec_tag(axis, -s, iteration), 64)
                for axis, s, nbr in coarse_neighbors]
        reqs += [comm.isend(nbr, _matvec_tag(axis, s, iteration), 64)
                 for axis, s, nbr in coarse_neighbors]
        comm.wait_all(reqs)
    with comm.region("halo_exchange", level=label):
        reqs = [comm.irecv(src, _AGG_TAG, agg_bytes) for src in retirees]
        for axis, s, nbr in coarse_neighbors:
            fb = face_bytes(merged, axis, f, eb)
            reqs.append(comm.irecv(nbr, _coarse_tag(axis, -s, iteration), fb))
        for axis, s, nbr in coarse_neighbors:
            fb = face_bytes(merged, axis, f, eb)
            reqs.append(comm.isend(nbr, _coarse_tag(axis, s, iteration), fb))
        comm.wait_all(reqs)


def lag_step(comm: Communicator, grid: Grid3D, params: KernelParams) -> None:
    """Strong-scaling timestep loop: face exchange, then a timestep-size
    reduction and a broadcast each step."""
    neighbors = grid.face_neighbors(comm.rank)
    f, eb = params.fields_per_cell, params.element_bytes
    with comm.region("main"):
        for step in range(params.timesteps):
            with comm.region("timestep"):
                with comm.region("halo_exchange"):
                    reqs = []
                    for axis, s, nbr in neighbors:
                        reqs.append(comm.irecv(nbr, _halo_tag(axis, -s, step),
                                               face_bytes(params.cells, axis, f, eb)))
                    for axis, s, nbr in neighbors:
                        reqs.append(comm.isend(nbr, _halo_tag(axis, s, step),
                                               face_bytes(params.cells, axis, f, eb)))
                    comm.wait_all(reqs)
                comm.allreduce(8)
                comm.bcast(0, 8)
                comm.compute(params.cells[0] * params.cells[1] * params.cells[2])


KERNELS = {
    "halo3d": halo3d,
    "sweep": sweep,
    "amg_vcycle": amg_vcycle,
    "lag_step": lag_step,
}
