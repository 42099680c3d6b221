"""Read-only access to solver run directories: manifest plus binary frames.

The on-disk contract is small and frozen (a JSON manifest next to
headerless little-endian float64 frames, first grid axis slowest), so this
package reimplements it instead of importing the solver.  A render must be
possible from a bare run directory with nothing but the manifest in it.
"""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

FRAME_DTYPE = "<f8"


@dataclass(frozen=True)
class FrameRef:
    """One density frame: population, time slice, file, and its checksum."""

    population: int
    time_index: int
    time: float
    path: str
    n_values: int
    sha256: str


@dataclass(frozen=True)
class RunManifest:
    path: str
    points_per_axis: tuple
    extent_per_axis: tuple
    n_populations: int
    n_steps: int
    horizon: float
    frame_stride: int
    status: str
    frames: dict
    raw: dict

    @property
    def time_indices(self):
        """Sorted time indices that have at least one density frame."""
        return sorted({k for (_, k) in self.frames})

    @property
    def step_size(self):
        return self.horizon / self.n_steps

    def frame(self, population, time_index):
        try:
            return self.frames[(population, time_index)]
        except KeyError:
            raise KeyError(
                f"no density frame for population {population} at k={time_index}"
            ) from None


def load_manifest(path):
    """Parse ``manifest.json``; frame paths are resolved next to it."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "frames" not in raw:
        raise ValueError(f"{path}: not a run manifest")
    base = os.path.dirname(os.path.abspath(path))
    grid = raw["grid"]
    frames = {}
    for entry in raw["frames"]:
        ref = FrameRef(
            population=int(entry["population"]),
            time_index=int(entry["time_index"]),
            time=float(entry["time"]),
            path=os.path.join(base, entry["file"]),
            n_values=int(entry["n_values"]),
            sha256=str(entry["sha256"]),
        )
        frames[(ref.population, ref.time_index)] = ref
    return RunManifest(
        path=os.path.abspath(path),
        points_per_axis=tuple(int(n) for n in grid["points_per_axis"]),
        extent_per_axis=tuple(
            (float(lo), float(hi)) for lo, hi in grid["extent_per_axis"]
        ),
        n_populations=int(raw["n_populations"]),
        n_steps=int(raw["n_steps"]),
        horizon=float(raw["horizon"]),
        frame_stride=int(raw.get("frame_stride", 1)),
        status=str(raw.get("status", "")),
        frames=frames,
        raw=raw,
    )


def read_frame_values(ref, *, verify=False):
    with open(ref.path, "rb") as fh:
        payload = fh.read()
    expected = ref.n_values * 8
    if len(payload) != expected:
        raise ValueError(
            f"{ref.path}: {len(payload)} bytes on disk, manifest says {expected}"
        )
    if verify and hashlib.sha256(payload).hexdigest() != ref.sha256:
        raise ValueError(f"{ref.path}: checksum mismatch")
    return np.frombuffer(payload, dtype=FRAME_DTYPE)


def frame_grid(manifest, population, time_index, *, verify=False):
    """Density as an array indexed ``[axis0, axis1, ...]``, axis 0 slowest."""
    ref = manifest.frame(population, time_index)
    values = read_frame_values(ref, verify=verify)
    return values.reshape(manifest.points_per_axis)


def missing_frames(manifest, keys=None):
    """``(population, time_index)`` pairs whose frame file is absent."""
    if keys is None:
        keys = sorted(manifest.frames)
    out = []
    for key in keys:
        ref = manifest.frames.get(tuple(key))
        if ref is None or not os.path.exists(ref.path):
            out.append(tuple(key))
    return out
