"""Run configuration: JSON schema, validation, and canonicalization.

A configuration document describes one solve end to end: the grid, the time
discretization, per-population initial data and final costs, the pairwise
interaction kernels, solver options, and output controls.  Parsing is
strict: unknown keys are rejected, and every error message carries the key
path that caused it.

Parsing produces both a ready-to-run :class:`~.solver.ProblemSpec` and a
canonical form of the document with every default made explicit and file
paths made absolute.  The canonical form is its own fixed point: parsing it
again yields the same canonical form, which is what makes ``describe``
round-trip and gives each run a stable configuration hash.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .frames import read_frame
from .grids import (
    BOUNDARIES,
    GridSpec,
    MassField,
    ScalarField,
    build_grid,
    gaussian_field,
)
from .interaction import (
    BallKernel,
    CoulombKernel,
    InteractionMatrix,
    TabulatedKernel,
    ZERO_KERNEL,
    load_tabulated_kernel,
)
from .solver import LOG_DOMAIN_MODES, SWEEP_MODES, ProblemSpec

INITIAL_FAMILIES = ("gaussian", "uniform", "file")
COST_FAMILIES = ("quadratic_bowl", "gaussian", "zero", "file")
KERNEL_FAMILIES = ("ball", "coulomb", "tabulated", "zero")

SOLVER_DEFAULTS = {
    "tol": 1e-6,
    "max_iter": 2000,
    "sweep": "gauss_seidel",
    "symmetrize": False,
    "legacy_unweighted": False,
    "log_domain": "auto",
    "damping": 1.0,
    "literal_signs": False,
    "record_energy": False,
}

OUTPUT_DEFAULTS = {
    "out_dir": "run_output",
    "frame_stride": 1,
    "emit_diagnostics": True,
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _check_mapping(doc, path, required, optional):
    if not isinstance(doc, dict):
        _fail(path, f"expected a mapping, got {type(doc).__name__}")
    allowed = set(required) | set(optional)
    for key in doc:
        if key not in allowed:
            _fail(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in doc:
            _fail(path, f"missing required key {key!r}")


def _number(doc, path, key, default=None, *, positive=False, nonnegative=False):
    if key not in doc:
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"{path}.{key}", "expected a number")
    value = float(value)
    if not np.isfinite(value):
        _fail(f"{path}.{key}", "must be finite")
    if positive and value <= 0:
        _fail(f"{path}.{key}", f"must be positive; got {value}")
    if nonnegative and value < 0:
        _fail(f"{path}.{key}", f"must be nonnegative; got {value}")
    return value


def _integer(doc, path, key, default=None, *, minimum=None):
    if key not in doc:
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(f"{path}.{key}", "expected an integer")
    if minimum is not None and value < minimum:
        _fail(f"{path}.{key}", f"must be >= {minimum}; got {value}")
    return value


def _boolean(doc, path, key, default):
    if key not in doc:
        return default
    value = doc[key]
    if not isinstance(value, bool):
        _fail(f"{path}.{key}", "expected true or false")
    return value


def _choice(doc, path, key, default, choices):
    if key not in doc:
        return default
    value = doc[key]
    if value not in choices:
        _fail(f"{path}.{key}", f"must be one of {list(choices)}; got {value!r}")
    return value


def _vector(doc, path, key, length, *, positive=False):
    if key not in doc:
        _fail(path, f"missing required key {key!r}")
    value = doc[key]
    if not isinstance(value, list) or len(value) != length:
        _fail(f"{path}.{key}", f"expected a list of {length} numbers")
    out = []
    for idx, item in enumerate(value):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            _fail(f"{path}.{key}[{idx}]", "expected a number")
        item = float(item)
        if not np.isfinite(item):
            _fail(f"{path}.{key}[{idx}]", "must be finite")
        if positive and item <= 0:
            _fail(f"{path}.{key}[{idx}]", f"must be positive; got {item}")
        out.append(item)
    return out


def _abspath(base_dir, path_value, path):
    if not isinstance(path_value, str) or not path_value:
        _fail(path, "expected a non-empty path string")
    if os.path.isabs(path_value):
        return path_value
    return os.path.abspath(os.path.join(base_dir, path_value))


# -- section parsers ---------------------------------------------------------


def _parse_grid(doc, path) -> tuple:
    _check_mapping(doc, path, ["points_per_axis"], ["extent_per_axis"])
    points = doc["points_per_axis"]
    if not isinstance(points, list) or not points:
        _fail(f"{path}.points_per_axis", "expected a non-empty list of integers")
    for idx, n in enumerate(points):
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            _fail(f"{path}.points_per_axis[{idx}]", f"must be an integer >= 2; got {n!r}")
    if "extent_per_axis" in doc:
        ext = doc["extent_per_axis"]
        if not isinstance(ext, list) or len(ext) != len(points):
            _fail(
                f"{path}.extent_per_axis",
                f"expected one [lo, hi] pair per axis ({len(points)} axes)",
            )
        extents = []
        for idx, pair in enumerate(ext):
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in pair)
            ):
                _fail(f"{path}.extent_per_axis[{idx}]", "expected [lo, hi] numbers")
            lo, hi = float(pair[0]), float(pair[1])
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                _fail(f"{path}.extent_per_axis[{idx}]", f"need finite hi > lo; got {pair}")
            extents.append((lo, hi))
        extents = tuple(extents)
    else:
        extents = tuple((0.0, 1.0) for _ in points)
    grid = build_grid(tuple(points), extents)
    canonical = {
        "points_per_axis": [int(n) for n in points],
        "extent_per_axis": [[lo, hi] for lo, hi in extents],
    }
    return grid, canonical


def _parse_initial(doc, path, grid: GridSpec, base_dir) -> tuple:
    _check_mapping(doc, path, ["family"], ["center", "weights", "path"])
    family = _choice(doc, path, "family", None, INITIAL_FAMILIES)
    if family == "gaussian":
        center = _vector(doc, path, "center", grid.dims)
        weights = _vector(doc, path, "weights", grid.dims, positive=True)
        if "path" in doc:
            _fail(f"{path}.path", "not valid for family 'gaussian'")
        field = gaussian_field(grid, center, weights)
        canonical = {"family": "gaussian", "center": center, "weights": weights}
    elif family == "uniform":
        for key in ("center", "weights", "path"):
            if key in doc:
                _fail(f"{path}.{key}", "not valid for family 'uniform'")
        field = MassField(np.full(grid.size, 1.0 / grid.size), grid)
        canonical = {"family": "uniform"}
    else:  # file
        for key in ("center", "weights"):
            if key in doc:
                _fail(f"{path}.{key}", "not valid for family 'file'")
        if "path" not in doc:
            _fail(path, "missing required key 'path'")
        abspath = _abspath(base_dir, doc["path"], f"{path}.path")
        try:
            values = read_frame(abspath, expected_size=grid.size)
        except (OSError, ValueError) as exc:
            _fail(f"{path}.path", str(exc))
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            _fail(f"{path}.path", "frame must hold finite nonnegative masses")
        total = values.sum()
        if abs(total - 1.0) > 1e-8:
            _fail(f"{path}.path", f"frame mass is {total!r}, expected 1 within 1e-8")
        field = MassField(values / total, grid)
        canonical = {"family": "file", "path": abspath}
    return field, canonical


def _parse_cost(doc, path, grid: GridSpec, base_dir) -> tuple:
    _check_mapping(
        doc, path, ["family"], ["center", "weights", "strength", "amplitude", "path"]
    )
    family = _choice(doc, path, "family", None, COST_FAMILIES)
    centers = grid.cell_centers()
    if family == "quadratic_bowl":
        center = _vector(doc, path, "center", grid.dims)
        strength = _number(doc, path, "strength", None)
        if strength is None:
            _fail(path, "missing required key 'strength'")
        values = strength * ((centers - np.array(center)[None, :]) ** 2).sum(axis=1)
        canonical = {"family": "quadratic_bowl", "center": center, "strength": strength}
    elif family == "gaussian":
        center = _vector(doc, path, "center", grid.dims)
        weights = _vector(doc, path, "weights", grid.dims, positive=True)
        amplitude = _number(doc, path, "amplitude", 1.0)
        expo = -((centers - np.array(center)[None, :]) ** 2 * np.array(weights)).sum(axis=1)
        values = amplitude * np.exp(expo)
        canonical = {
            "family": "gaussian",
            "center": center,
            "weights": weights,
            "amplitude": amplitude,
        }
    elif family == "zero":
        values = np.zeros(grid.size)
        canonical = {"family": "zero"}
    else:  # file
        if "path" not in doc:
            _fail(path, "missing required key 'path'")
        abspath = _abspath(base_dir, doc["path"], f"{path}.path")
        try:
            values = read_frame(abspath, expected_size=grid.size)
        except (OSError, ValueError) as exc:
            _fail(f"{path}.path", str(exc))
        if not np.all(np.isfinite(values)):
            _fail(f"{path}.path", "cost frame must hold finite values")
        canonical = {"family": "file", "path": abspath}
    return ScalarField(np.asarray(values, dtype=float), grid), canonical


def _parse_kernel(doc, path, grid: GridSpec, base_dir) -> tuple:
    _check_mapping(
        doc, path, ["family"], ["strength", "radius", "cap", "path", "radii", "values"]
    )
    family = _choice(doc, path, "family", None, KERNEL_FAMILIES)
    if family == "ball":
        strength = _number(doc, path, "strength", None, nonnegative=True)
        radius = _number(doc, path, "radius", None, positive=True)
        if strength is None or radius is None:
            _fail(path, "family 'ball' needs 'strength' and 'radius'")
        return BallKernel(strength, radius), {
            "family": "ball",
            "strength": strength,
            "radius": radius,
        }
    if family == "coulomb":
        cap = _number(doc, path, "cap", None, positive=True)
        if cap is None:
            _fail(path, "family 'coulomb' needs 'cap'")
        return CoulombKernel(cap), {"family": "coulomb", "cap": cap}
    if family == "zero":
        return ZERO_KERNEL, {"family": "zero"}
    # tabulated: either an inline radial profile or a file with a full table
    has_radial = "radii" in doc or "values" in doc
    has_path = "path" in doc
    if has_radial == has_path:
        _fail(path, "family 'tabulated' needs either 'path' or both 'radii' and 'values'")
    if has_path:
        abspath = _abspath(base_dir, doc["path"], f"{path}.path")
        try:
            kernel = load_tabulated_kernel(abspath, grid)
        except (OSError, ValueError) as exc:
            _fail(f"{path}.path", str(exc))
        return kernel, {"family": "tabulated", "path": abspath}
    if "radii" not in doc or "values" not in doc:
        _fail(path, "family 'tabulated' needs both 'radii' and 'values'")
    radii = doc["radii"]
    values = doc["values"]
    if not isinstance(radii, list) or not isinstance(values, list):
        _fail(f"{path}.radii", "expected lists of numbers")
    try:
        kernel = TabulatedKernel(
            radii=np.asarray(radii, dtype=float), values=np.asarray(values, dtype=float)
        )
    except ValueError as exc:
        _fail(path, str(exc))
    return kernel, {
        "family": "tabulated",
        "radii": [float(r) for r in radii],
        "values": [float(v) for v in values],
    }


def _parse_interactions(doc, path, n_populations, grid, base_dir) -> tuple:
    if not isinstance(doc, list):
        _fail(path, "expected a list of interaction entries")
    table = [
        [ZERO_KERNEL for _ in range(n_populations)] for _ in range(n_populations)
    ]
    seen = set()
    canonical = []
    for idx, entry in enumerate(doc):
        epath = f"{path}[{idx}]"
        _check_mapping(entry, epath, ["i", "j", "kernel"], ["symmetric"])
        i = _integer(entry, epath, "i", None, minimum=0)
        j = _integer(entry, epath, "j", None, minimum=0)
        if i >= n_populations or j >= n_populations:
            _fail(epath, f"population index out of range (N = {n_populations})")
        if i == j:
            _fail(epath, "self-interaction is not allowed; indices must differ")
        symmetric = _boolean(entry, epath, "symmetric", True)
        kernel, kcanon = _parse_kernel(entry["kernel"], f"{epath}.kernel", grid, base_dir)
        pairs = [(i, j), (j, i)] if symmetric else [(i, j)]
        for pair in pairs:
            if pair in seen:
                _fail(epath, f"pair {pair} already assigned by an earlier entry")
            seen.add(pair)
            table[pair[0]][pair[1]] = kernel
        canonical.append({"i": i, "j": j, "symmetric": symmetric, "kernel": kcanon})
    return InteractionMatrix(table), canonical


def _parse_solver(doc, path) -> dict:
    _check_mapping(doc, path, [], list(SOLVER_DEFAULTS))
    out = dict(SOLVER_DEFAULTS)
    out["tol"] = _number(doc, path, "tol", out["tol"], positive=True)
    out["max_iter"] = _integer(doc, path, "max_iter", out["max_iter"], minimum=1)
    out["sweep"] = _choice(doc, path, "sweep", out["sweep"], SWEEP_MODES)
    out["symmetrize"] = _boolean(doc, path, "symmetrize", out["symmetrize"])
    out["legacy_unweighted"] = _boolean(
        doc, path, "legacy_unweighted", out["legacy_unweighted"]
    )
    out["log_domain"] = _choice(doc, path, "log_domain", out["log_domain"], LOG_DOMAIN_MODES)
    damping = _number(doc, path, "damping", out["damping"], positive=True)
    if damping > 1.0:
        _fail(f"{path}.damping", f"must lie in (0, 1]; got {damping}")
    out["damping"] = damping
    out["literal_signs"] = _boolean(doc, path, "literal_signs", out["literal_signs"])
    out["record_energy"] = _boolean(doc, path, "record_energy", out["record_energy"])
    return out


def _parse_output(doc, path) -> dict:
    _check_mapping(doc, path, [], list(OUTPUT_DEFAULTS))
    out = dict(OUTPUT_DEFAULTS)
    if "out_dir" in doc:
        if not isinstance(doc["out_dir"], str) or not doc["out_dir"]:
            _fail(f"{path}.out_dir", "expected a non-empty string")
        out["out_dir"] = doc["out_dir"]
    out["frame_stride"] = _integer(doc, path, "frame_stride", out["frame_stride"], minimum=1)
    out["emit_diagnostics"] = _boolean(
        doc, path, "emit_diagnostics", out["emit_diagnostics"]
    )
    return out


# -- top level ---------------------------------------------------------------


@dataclass
class ResolvedRun:
    """A parsed configuration: the problem plus effective options."""

    problem: ProblemSpec
    solver: dict
    output: dict
    canonical: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.canonical)


def parse_config_dict(doc, base_dir=".", overrides=None) -> ResolvedRun:
    """Validate a configuration document and build the problem it describes.

    ``overrides`` maps dotted keys (``"solver.tol"``, ``"output.out_dir"``)
    to replacement values applied before validation, which is how the
    command line takes precedence over the file.
    """
    if not isinstance(doc, dict):
        raise ConfigError(
            f"config: expected a mapping at top level, got {type(doc).__name__}"
        )
    doc = json.loads(json.dumps(doc))  # private copy, plain JSON types only
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like 'section.key'")
        node = doc.setdefault(section, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{section}: cannot apply override, not a mapping")
        node[key] = value

    _check_mapping(
        doc,
        "config",
        ["grid", "n_steps", "populations"],
        ["horizon", "epsilon", "boundary", "interactions", "solver", "output"],
    )
    grid, grid_canonical = _parse_grid(doc["grid"], "config.grid")
    horizon = _number(doc, "config", "horizon", 1.0, positive=True)
    n_steps = _integer(doc, "config", "n_steps", None, minimum=1)
    epsilon = _number(doc, "config", "epsilon", 1.0, positive=True)
    boundary = _choice(doc, "config", "boundary", "reflecting", BOUNDARIES)

    pops = doc["populations"]
    if not isinstance(pops, list) or not pops:
        _fail("config.populations", "expected a non-empty list")
    initial, final_cost, pops_canonical = [], [], []
    for idx, pop in enumerate(pops):
        ppath = f"config.populations[{idx}]"
        _check_mapping(pop, ppath, ["initial", "final_cost"], [])
        fld, icanon = _parse_initial(pop["initial"], f"{ppath}.initial", grid, base_dir)
        cost, ccanon = _parse_cost(pop["final_cost"], f"{ppath}.final_cost", grid, base_dir)
        initial.append(fld)
        final_cost.append(cost)
        pops_canonical.append({"initial": icanon, "final_cost": ccanon})

    interactions, inter_canonical = _parse_interactions(
        doc.get("interactions", []), "config.interactions", len(pops), grid, base_dir
    )
    solver = _parse_solver(doc.get("solver", {}), "config.solver")
    output = _parse_output(doc.get("output", {}), "config.output")

    problem = ProblemSpec(
        grid=grid,
        horizon=horizon,
        n_steps=n_steps,
        initial=initial,
        final_cost=final_cost,
        interactions=interactions,
        epsilon=epsilon,
        boundary=boundary,
    )
    canonical = {
        "grid": grid_canonical,
        "horizon": horizon,
        "n_steps": n_steps,
        "epsilon": epsilon,
        "boundary": boundary,
        "populations": pops_canonical,
        "interactions": inter_canonical,
        "solver": solver,
        "output": output,
    }
    return ResolvedRun(
        problem=problem, solver=solver, output=output, canonical=canonical
    )


def parse_config(path, overrides=None) -> ResolvedRun:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}") from exc
    return parse_config_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)),
                             overrides=overrides)


def describe_json(canonical: dict) -> str:
    """The canonical document, pretty-printed with stable key order."""
    return json.dumps(canonical, indent=2, sort_keys=True) + "\n"


def config_hash(canonical: dict) -> str:
    packed = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(packed.encode("utf-8")).hexdigest()
