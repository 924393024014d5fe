"""Configuration-driven experiment runner.

Usage::

    geneo-dd run config.txt [key=value ...]
    geneo-dd run --set problem=plate_1b --set partitions=4x1x1,8x1x1 ...

A config file holds ``key = value`` lines; ``#`` starts a comment. List-valued keys
(``partitions``, ``preconditioners``) take comma-separated entries, and every
combination becomes one report row.
"""

import argparse
import csv
import dataclasses
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import fem, geneo, krylov, materials, mesh, postprocess
from .decomposition import Communicator, ContractViolation, OneLevelSchwarz, WorkerPool, setup_subdomains
from .elements import HEX8, SERENDIPITY20

log = logging.getLogger("geneo_dd")

PROBLEMS = ("plate_1a", "plate_1b", "spe10", "synthetic_contrast")
PRECONDITIONERS = ("none", "AS1", "ZEM", "GenEO")
SOLVERS = ("pcg", "fgmres")
ELEMENTS = {"hex8": HEX8, "serendipity20": SERENDIPITY20}
PATTERNS = ("layers", "channels")
REPORT_HEADER = ["N", "precond", "iters", "kappa", "dimVH", "t_setup", "t_iterate", "qoi"]

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CONTRACT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


def _shape(text):
    parts = [int(p) for p in str(text).lower().split("x")]
    parts += [1] * (3 - len(parts))
    if len(parts) != 3 or min(parts) < 1:
        raise ConfigError(f"bad partition shape {text!r}")
    return tuple(parts)


def _list(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t.strip() for t in str(text).split(",") if t.strip()]


@dataclass
class RunConfig:
    problem: str = "plate_1b"
    element_type: str = "hex8"
    refinement: int = 1
    partitions: list = field(default_factory=lambda: [(4, 1, 1)])
    overlap: int = 1
    preconditioners: list = field(default_factory=lambda: ["GenEO"])
    rho: float = 1.0
    sigma: str = "trace"
    k_max: int = 20
    solver: str = "pcg"
    tol: float = 1e-5
    max_it: int = 1000
    output_dir: str = "out"
    workers: int = 1
    seed: int = 0
    # plate
    pressure: float = 0.01
    stacking_file: str = ""
    # diffusion
    dims: tuple = (36, 36, 36)
    contrast: float = 1e6
    pattern: str = "layers"
    slab_cells: int = 1
    spe10_path: str = ""
    stride: int = 4
    write_vtk: bool = True

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.element_type not in ELEMENTS:
            raise ConfigError(f"element_type must be one of {tuple(ELEMENTS)}")
        if self.problem in ("spe10", "synthetic_contrast") and self.element_type != "hex8":
            raise ConfigError("diffusion problems use hex8 elements")
        for p in self.preconditioners:
            if p not in PRECONDITIONERS:
                raise ConfigError(f"preconditioner {p!r} not in {PRECONDITIONERS}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.overlap < 1 and any(p in ("AS1", "ZEM", "GenEO") for p in self.preconditioners):
            raise ConfigError("Schwarz preconditioners need overlap >= 1")
        if self.refinement < 1 or self.max_it < 1 or self.workers < 1 or self.k_max < 0:
            raise ConfigError("refinement, max_it and workers must be positive, k_max non-negative")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.contrast < 1:
            raise ConfigError("contrast must be >= 1")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}")
        if self.sigma != "trace":
            try:
                if float(self.sigma) >= 0:
                    raise ConfigError("sigma must be negative")
            except ValueError as exc:
                raise ConfigError("sigma is 'trace' or a negative number") from exc
        if not self.partitions:
            raise ConfigError("no partitions given")
        return self

    @property
    def shift(self):
        return None if self.sigma == "trace" else float(self.sigma)


def _coerce(cfg_field, value):
    name, default = cfg_field.name, cfg_field.default
    if name == "partitions":
        return [_shape(v) for v in _list(value)]
    if name == "preconditioners":
        return _list(value)
    if name == "dims":
        return _shape(value)
    if isinstance(default, bool):
        if str(value).lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise ConfigError(f"{name} expects a boolean")
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def parse_config(lines=(), overrides=()):
    """Build a RunConfig from ``key = value`` lines followed by ``key=value`` overrides."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for raw in list(lines) + list(overrides):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = _coerce(fields[key], value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return RunConfig(**values).validate()


def load_config(path=None, overrides=()):
    lines = []
    if path:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(lines, overrides)


# -- problems --------------------------------------------------------------------------


def generate_synthetic_contrast(dims, contrast, pattern="layers", seed=0, slab_cells=1):
    """Isotropic two-valued permeability with max/min ratio exactly ``contrast``.

    ``layers``: alternating z-slabs of ``slab_cells`` cells, low first.
    ``channels``: random straight x-channels of high permeability (seeded).
    """
    nx, ny, nz = dims
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    if contrast == 1:
        high = np.zeros((nz, ny, nx), dtype=bool)
    elif pattern == "layers":
        high = (k // slab_cells) % 2 == 1
    elif pattern == "channels":
        rng = np.random.default_rng(seed)
        high = np.zeros((nz, ny, nx), dtype=bool)
        n_channels = max(1, (ny * nz) // 16)
        for jj, kk in zip(rng.integers(0, ny, n_channels), rng.integers(0, nz, n_channels)):
            high[kk, jj, :] = True
        if high.all():
            high[0, 0, 0] = False
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    K = np.where(high, float(contrast), 1.0).ravel()
    if contrast > 1 and not (high.any() and not high.all()):
        raise ValueError("field too small for the pattern")
    return materials.PermeabilityField(K.copy(), K.copy(), K.copy(), tuple(dims))


@dataclass(eq=False)
class Problem:
    grid: object
    coefficients: object
    bcs: fem.BoundarySpec
    kind: str
    pressure: float = 0.0


def plate_problem(cfg):
    if cfg.stacking_file:
        spec = mesh.read_stacking_csv(cfg.stacking_file, (100.0, 20.0), (20 * cfg.refinement, 5 * cfg.refinement))
    else:
        lam = materials.Laminate(tuple(materials.Ply("ply", t, 0.23) for t in materials.PLATE_SEQUENCE))
        spec = mesh.GridSpec((100.0, 20.0), (20 * cfg.refinement, 5 * cfg.refinement), materials.laminate_layers(lam))
    grid = mesh.build_layer_cake(spec, ELEMENTS[cfg.element_type])
    C = materials.region_stiffness(spec.layer_stack, materials.default_materials())
    T = spec.thickness
    q = cfg.pressure * 1e-3  # MPa -> GPa
    bcs = fem.BoundarySpec(
        is_dirichlet=lambda x, i: x[:, 0] < 1e-6,
        neumann_traction=lambda x, n: np.where((x[:, 2] > T - 1e-6)[:, None], np.array([0.0, 0.0, -q]), 0.0),
    )
    return Problem(grid, C, bcs, "elasticity", cfg.pressure)


def diffusion_problem(field_, extents):
    spec = mesh.box_spec(extents, field_.dims)
    grid = mesh.build_layer_cake(spec, HEX8)
    bcs = fem.BoundarySpec(is_dirichlet=lambda x, i: x[:, 2] < 1e-9 * extents[2], body_force=lambda x: np.ones((len(x), 1)))
    return Problem(grid, field_, bcs, "diffusion")


def build_problem(cfg):
    if cfg.problem.startswith("plate"):
        return plate_problem(cfg)
    if cfg.problem == "spe10":
        if not cfg.spe10_path:
            raise ConfigError("spe10 needs spe10_path")
        try:
            full = materials.load_spe10(cfg.spe10_path)
        except OSError as exc:
            raise ConfigError(f"cannot read {cfg.spe10_path}: {exc}") from exc
        sub = full.subsample(cfg.stride) if cfg.stride > 1 else full
        ext = tuple(e * n / d for e, n, d in zip(materials.SPE10_EXTENTS, np.array(sub.dims) * cfg.stride, full.dims))
        return diffusion_problem(sub, ext)
    field_ = generate_synthetic_contrast(cfg.dims, cfg.contrast, cfg.pattern, cfg.seed, cfg.slab_cells)
    return diffusion_problem(field_, tuple(float(n) for n in cfg.dims))


# -- preconditioners and solve ---------------------------------------------------------


@dataclass(eq=False)
class Preconditioner:
    operator: object
    dim_coarse: int = 0
    selections: list = None
    comm: Communicator = None
    one_level: OneLevelSchwarz = None


def setup_preconditioner(kind, system, grid, decomp, rho=1.0, k_max=20, sigma=None, pool=None):
    """Build ``none``, ``AS1``, ``ZEM`` or ``GenEO`` for a decomposed system."""
    if kind == "none":
        return Preconditioner(None)
    pool = pool or WorkerPool(1)
    comm = Communicator(decomp.neighbor_lists)
    _, ops = setup_subdomains(system, decomp, pool)
    one = OneLevelSchwarz(decomp, ops, comm, pool)
    if kind == "AS1":
        return Preconditioner(one, 0, None, comm, one)
    if kind == "ZEM":
        coarse = geneo.zem_basis(grid, decomp, ops)
        sels = None
    else:
        sels = geneo.compute_geneo_selections(grid, decomp, ops, rho, k_max, pool, sigma)
        coarse = geneo.build_coarse_basis(sels, ops)
    two = geneo.TwoLevelSchwarz(one, coarse)
    return Preconditioner(two, coarse.dim - len(coarse.dropped), sels, comm, one)


def compute_qoi(problem, u, cfg):
    if problem.kind == "diffusion":
        return float(np.abs(u).max())
    if cfg.problem == "plate_1a":
        return postprocess.max_displacement(u)
    stress = postprocess.recover_stress(u, problem.grid, problem.coefficients, scale=1e3)
    cells = postprocess.interface_cells(problem.grid)
    F = postprocess.camanho(stress.stress[cells])
    return postprocess.failure_load(problem.pressure, float(F.max()) if F.size else 0.0)


@dataclass
class RunResult:
    row: dict
    report: krylov.SolveReport
    u: np.ndarray
    precond: Preconditioner


def solve_case(cfg, problem, system, partition, kind, pool=None):
    t0 = time.perf_counter()
    N = int(np.prod(partition))
    if N == 1 and kind != "none":
        # a single subdomain is solved directly
        F = krylov.factorize(system.A)
        t1 = time.perf_counter()
        u = F.solve(system.b)
        report = krylov.SolveReport(iterations=0, residual_history=[1.0, 0.0], converged=True)
        report.wall_time = time.perf_counter() - t1
        pre = Preconditioner(None)
    else:
        decomp = mesh.decompose(problem.grid, partition, cfg.overlap, system.ncomp) if kind != "none" else None
        pre = setup_preconditioner(kind, system, problem.grid, decomp, cfg.rho, cfg.k_max, cfg.shift, pool)
        t1 = time.perf_counter()
        reduce = pre.comm.allreduce if pre.comm else None
        if cfg.solver == "pcg":
            u, report = krylov.pcg(system.A, pre.operator, system.b, cfg.tol, cfg.max_it, reduce=reduce)
        else:
            u, report = krylov.fgmres(system.A, pre.operator, system.b, cfg.tol, max_it=cfg.max_it)
    t2 = time.perf_counter()
    row = dict(
        N=N,
        precond=kind if N > 1 or kind == "none" else "direct",
        iters=report.iterations,
        kappa=report.condition_estimate,
        dimVH=pre.dim_coarse,
        t_setup=t1 - t0,
        t_iterate=t2 - t1,
        qoi=compute_qoi(problem, u, cfg),
    )
    return RunResult(row, report, u, pre)


def write_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def write_artifacts(directory, tag, problem, result):
    result.report.write_csv(os.path.join(directory, f"residuals_{tag}.csv"))
    geneo.write_eigen_report(os.path.join(directory, f"eigen_{tag}.csv"), result.precond.selections or [])
    if result.precond.comm is not None:
        result.precond.comm.ledger.write_csv(os.path.join(directory, f"ledger_{tag}.csv"))
    else:
        with open(os.path.join(directory, f"ledger_{tag}.csv"), "w") as fh:
            fh.write("sender,receiver,messages,doubles_sent\n")
    coarse = getattr(result.precond.operator, "coarse", None)
    if coarse is not None and coarse.A_H is not None:
        fem.write_matrix_market(os.path.join(directory, f"coarse_{tag}.mtx"), coarse.A_H)


def write_solution_vtk(path, problem, u):
    grid = problem.grid
    if problem.kind == "diffusion":
        postprocess.write_vtk(path, grid, point_scalars={"pressure": u}, cell_scalars={"region": grid.cell_region})
        return
    stress = postprocess.recover_stress(u, grid, problem.coefficients, scale=1e3)
    F = np.zeros(grid.n_cells)
    cells = postprocess.interface_cells(grid)
    F[cells] = postprocess.camanho(stress.stress[cells])
    postprocess.write_vtk(
        path,
        grid,
        point_vectors={"displacement": u.reshape(-1, 3)},
        cell_scalars={"region": grid.cell_region, "camanho": F},
        cell_tensors={"stress": stress.stress},
    )


def run(cfg):
    """Execute every (partition, preconditioner) combination; returns the report rows.

    Artifacts are staged in a temporary directory and moved into ``output_dir`` only
    when every run succeeded.
    """
    cfg.validate()
    problem = build_problem(cfg)
    system = fem.assemble(problem.grid, problem.coefficients, problem.bcs)
    pool = WorkerPool(cfg.workers)
    os.makedirs(cfg.output_dir, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".stage-", dir=cfg.output_dir)
    rows = []
    try:
        for partition in cfg.partitions:
            direct_done = False
            for kind in cfg.preconditioners:
                N = int(np.prod(partition))
                if N == 1 and kind != "none":
                    # every Schwarz variant reduces to the same direct solve
                    if direct_done:
                        continue
                    direct_done = True
                log.info("running %s N=%d %s", cfg.problem, N, kind)
                result = solve_case(cfg, problem, system, partition, kind, pool)
                tag = f"N{N}_{result.row['precond']}"
                write_artifacts(stage, tag, problem, result)
                if cfg.write_vtk:
                    write_solution_vtk(os.path.join(stage, f"solution_{tag}.vtk"), problem, result.u)
                rows.append(result.row)
                print(
                    f"N={N:<4d} {result.row['precond']:<6s} iters={result.row['iters']:<5d} "
                    f"kappa={result.row['kappa']:<10.4g} dimVH={result.row['dimVH']:<5d} qoi={result.row['qoi']:.6g}"
                )
                if not result.report.converged:
                    raise NonConvergence(f"N={N} {kind}: no convergence in {cfg.max_it} iterations")
        write_report(os.path.join(stage, "report.csv"), rows)
        for name in os.listdir(stage):
            os.replace(os.path.join(stage, name), os.path.join(cfg.output_dir, name))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(prog="geneo-dd", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configured study")
    p_run.add_argument("config", nargs="?", help="key=value config file")
    p_run.add_argument("overrides", nargs="*", help="key=value overrides")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    config, overrides = args.config, list(args.overrides) + args.set
    if config and "=" in config and not os.path.exists(config):
        config, overrides = None, [config] + overrides
    try:
        cfg = load_config(config, overrides)
        run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ContractViolation, krylov.IndefiniteError, krylov.SingularMatrixError, krylov.BreakdownError) as exc:
        print(f"numerical contract violated: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
