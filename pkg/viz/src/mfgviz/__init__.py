"""Rendering for saved multi-population solver runs.

Reads a run directory (manifest plus binary density frames) and draws the
standard two-row panel composite, support sets or heatmaps per population,
or a GIF animation over all saved time slices.  The reader is self
contained; nothing here imports or recomputes solver state.
"""

from ._version import __version__
from .reader import (
    FrameRef,
    RunManifest,
    frame_grid,
    load_manifest,
    missing_frames,
    read_frame_values,
)
from .render import (
    DEFAULT_THRESHOLD,
    DEFAULT_TIMES,
    PALETTE,
    RenderReport,
    RenderSpec,
    build_panel_figure,
    compose_panel,
    population_colors,
    render_animation,
    render_panels,
    snap_time_indices,
    support_mask,
)

__all__ = [
    "__version__",
    "DEFAULT_THRESHOLD",
    "DEFAULT_TIMES",
    "FrameRef",
    "PALETTE",
    "RenderReport",
    "RenderSpec",
    "RunManifest",
    "build_panel_figure",
    "compose_panel",
    "frame_grid",
    "load_manifest",
    "missing_frames",
    "population_colors",
    "read_frame_values",
    "render_animation",
    "render_panels",
    "snap_time_indices",
    "support_mask",
]
