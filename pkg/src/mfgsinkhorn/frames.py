"""On-disk run artifacts: binary frames, the manifest, and the sweep log.

A frame is one time slice of one population, stored as a flat array of
little-endian 64-bit floats in grid row-major order (first axis slowest).
The format is deliberately headerless so any language can read it; all
metadata lives in ``manifest.json`` next to the frames, including a sha256
checksum per file.  Density frames and potential frames share the format.

Writes are deterministic: rerunning the same configuration reproduces every
frame byte for byte, and the manifest contains nothing time- or host-
dependent.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

FRAME_DTYPE = "<f8"
MANIFEST_NAME = "manifest.json"
ITERATION_LOG_NAME = "iterations.csv"
INCOMPLETE_MARKER = "INCOMPLETE"
MANIFEST_FORMAT_VERSION = 1


def frame_name(kind: str, population: int, time_index: int) -> str:
    return f"{kind}_p{population}_k{time_index:04d}.bin"


def write_frame(path, values) -> None:
    np.ascontiguousarray(np.asarray(values, dtype=float)).astype(FRAME_DTYPE).tofile(
        str(path)
    )


def read_frame(path, expected_size: int = None) -> np.ndarray:
    data = np.fromfile(str(path), dtype=FRAME_DTYPE).astype(float)
    if expected_size is not None and data.size != expected_size:
        raise ValueError(
            f"frame {path} holds {data.size} values, expected {expected_size}"
        )
    return data


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def kept_time_indices(n_steps: int, stride: int) -> list:
    """Time indices surviving stride thinning (always includes 0)."""
    if stride < 1:
        raise ValueError(f"frame_stride must be >= 1; got {stride}")
    return [k for k in range(n_steps + 1) if k % stride == 0]


def _write_frame_group(out_dir: Path, kind: str, stack: np.ndarray, kept, horizon, n_steps):
    """Write one family of frames; returns their manifest entries."""
    entries = []
    n_pop = stack.shape[0]
    for i in range(n_pop):
        for k in kept:
            name = frame_name(kind, i, k)
            path = out_dir / name
            write_frame(path, stack[i, k])
            entries.append(
                {
                    "population": i,
                    "time_index": k,
                    "time": k * horizon / n_steps,
                    "file": name,
                    "n_values": int(stack.shape[2]),
                    "sha256": sha256_file(path),
                }
            )
    return entries


def write_iteration_log(out_dir: Path, iterations, n_populations: int) -> str:
    """One row per sweep; energy columns appear when breakdowns were kept."""
    have_energy = any(rec.energies is not None for rec in iterations)
    header = ["sweep"]
    header += [f"marginal_error_pop{i}" for i in range(n_populations)]
    header += ["max_potential_change"]
    if have_energy:
        header += [
            "energy_entropic",
            "energy_interaction",
            "energy_final",
            "energy_total",
        ]
    path = out_dir / ITERATION_LOG_NAME
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in iterations:
            row = [rec.index]
            row += [f"{e:.17g}" for e in rec.marginal_error_per_population]
            row.append(f"{rec.max_potential_change:.17g}")
            if have_energy:
                if rec.energies is None:
                    row += ["", "", "", ""]
                else:
                    row += [
                        f"{rec.energies.entropic_total:.17g}",
                        f"{rec.energies.interaction_total:.17g}",
                        f"{rec.energies.final_cost_total:.17g}",
                        f"{rec.energies.total:.17g}",
                    ]
            writer.writerow(row)
    return ITERATION_LOG_NAME


def write_run(
    out_dir,
    *,
    resolved_config: dict,
    config_hash: str,
    solver_version: str,
    problem,
    marginals,
    potentials,
    report,
    energies,
    frame_stride: int = 1,
    emit_diagnostics: bool = True,
) -> dict:
    """Write every artifact of one run and return the manifest document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kept = kept_time_indices(problem.n_steps, frame_stride)
    density_entries = _write_frame_group(
        out, "density", marginals.rho, kept, problem.horizon, problem.n_steps
    )
    potential_entries = []
    if emit_diagnostics:
        potential_entries = _write_frame_group(
            out, "potential", potentials.u, kept, problem.horizon, problem.n_steps
        )
    log_name = write_iteration_log(out, report.iterations, problem.n_populations)
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "solver_version": solver_version,
        "grid": {
            "points_per_axis": list(problem.grid.points_per_axis),
            "extent_per_axis": [list(e) for e in problem.grid.extent_per_axis],
        },
        "n_populations": problem.n_populations,
        "n_steps": problem.n_steps,
        "horizon": problem.horizon,
        "epsilon": problem.epsilon,
        "boundary": problem.boundary,
        "config_hash": config_hash,
        "config": resolved_config,
        "status": report.status,
        "n_sweeps": report.n_sweeps,
        "final_error": report.final_error,
        "energies": energies.as_dict(),
        "frame_format": {
            "dtype": FRAME_DTYPE,
            "layout": "row-major, first axis slowest",
            "offset_bytes": 0,
        },
        "frame_stride": frame_stride,
        "frames": density_entries,
        "potential_frames": potential_entries,
        "iteration_log": log_name,
    }
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(run_dir) -> dict:
    path = Path(run_dir)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        return json.load(fh)


def verify_checksums(manifest: dict, run_dir) -> list:
    """Return one message per missing or corrupted frame; empty means clean."""
    base = Path(run_dir)
    problems = []
    for entry in list(manifest["frames"]) + list(manifest.get("potential_frames", [])):
        path = base / entry["file"]
        if not path.exists():
            problems.append(f"missing frame {entry['file']}")
            continue
        digest = sha256_file(path)
        if digest != entry["sha256"]:
            problems.append(
                f"checksum mismatch for {entry['file']}: "
                f"manifest {entry['sha256'][:12]}..., file {digest[:12]}..."
            )
    return problems


def read_frame_stack(manifest: dict, run_dir, kind: str = "frames") -> np.ndarray:
    """Assemble the full (N, K+1, M) stack of one frame family from disk.

    Every time index must be present, so this requires a stride-1 run for
    the interior slices; missing files are reported together.
    """
    base = Path(run_dir)
    n_pop = manifest["n_populations"]
    n_steps = manifest["n_steps"]
    size = int(np.prod(manifest["grid"]["points_per_axis"]))
    entries = {(e["population"], e["time_index"]): e for e in manifest[kind]}
    missing = [
        f"{kind}[{i},{k}]"
        for i in range(n_pop)
        for k in range(n_steps + 1)
        if (i, k) not in entries
    ]
    if missing:
        raise FileNotFoundError(
            "manifest lists no frame for: " + ", ".join(missing)
        )
    stack = np.empty((n_pop, n_steps + 1, size))
    for (i, k), entry in entries.items():
        stack[i, k] = read_frame(base / entry["file"], expected_size=size)
    return stack


def write_incomplete_marker(out_dir, message: str) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / INCOMPLETE_MARKER, "w") as fh:
            fh.write(message.rstrip() + "\n")
    except OSError:
        pass  # the marker is best-effort; the exit code still reports failure
