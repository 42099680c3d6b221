"""Panel figures and animations from saved density frames.

A panel shows every population at one time instant, either as support sets
(mass above a fraction of the frame's own maximum) or as translucent
heatmaps.  The default eight instants give the familiar two-row, four-column
composite; instants snap to the nearest saved time slice and each panel is
labeled with the time of the slice actually drawn, not the one requested.

Rendering is deterministic: the same run directory and options reproduce
the output file byte for byte.
"""

import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import to_rgb  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
from PIL import Image  # noqa: E402

from .reader import frame_grid, load_manifest, missing_frames  # noqa: E402

DEFAULT_TIMES = (0.0, 1.0 / 8, 1.0 / 4, 1.0 / 2, 5.0 / 8, 3.0 / 4, 7.0 / 8, 1.0)
DEFAULT_THRESHOLD = 0.05
PALETTE = (
    "#1f77b4",  # blue
    "#d62728",  # red
    "#2ca02c",  # green
    "#9467bd",  # purple
    "#ff7f0e",  # orange
    "#17becf",  # cyan
)
STYLES = ("support", "heatmap")
PAINT_ALPHA = 0.8
ANIMATION_SCALE = 6
ANIMATION_FRAME_MS = 120
PROGRESS_STRIP_PX = 8


@dataclass(frozen=True)
class RenderSpec:
    """Everything one render needs; validated on construction."""

    manifest_path: str
    out_path: str
    times: tuple = DEFAULT_TIMES
    threshold: float = DEFAULT_THRESHOLD
    colors: tuple = None
    style: str = "support"

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(
                f"threshold must lie strictly in (0, 1); got {self.threshold}"
            )
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ValueError("times must name at least one instant")
        if not all(math.isfinite(t) for t in times):
            raise ValueError(f"times must be finite; got {times}")
        object.__setattr__(self, "times", times)
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}; got {self.style!r}")
        if self.colors is not None:
            object.__setattr__(self, "colors", tuple(self.colors))


@dataclass(frozen=True)
class RenderReport:
    """What a render actually drew."""

    out_path: str
    time_indices: tuple
    labels: tuple
    colors: tuple
    n_panels: int


def support_mask(values, threshold):
    """Cells holding more than ``threshold`` of the frame's own maximum."""
    values = np.asarray(values, dtype=float)
    vmax = values.max() if values.size else 0.0
    if vmax <= 0.0:
        return np.zeros(values.shape, dtype=bool)
    return values > threshold * vmax


def snap_time_indices(manifest, times):
    """Nearest saved time index for each requested instant (ties go early)."""
    available = manifest.time_indices
    if not available:
        raise ValueError(f"{manifest.path}: manifest lists no frames")
    dt = manifest.step_size
    return tuple(
        min(available, key=lambda k: (abs(k * dt - t), k)) for t in times
    )


def population_colors(n_populations, override=None):
    if override is not None:
        if len(override) < n_populations:
            raise ValueError(
                f"{n_populations} populations but only {len(override)} colors"
            )
        return tuple(override[:n_populations])
    return tuple(PALETTE[i % len(PALETTE)] for i in range(n_populations))


def compose_panel(fields, colors, threshold, style="support"):
    """RGB image (axis 0 = first grid axis) of all populations over white.

    Populations are painted in order with straight alpha compositing, so a
    genuine overlap shows as a blend rather than hiding a population.
    """
    shape = np.asarray(fields[0]).shape
    out = np.ones(shape + (3,))
    for values, color in zip(fields, colors):
        values = np.asarray(values, dtype=float)
        if style == "support":
            alpha = np.where(support_mask(values, threshold), PAINT_ALPHA, 0.0)
        else:
            vmax = values.max()
            alpha = (values / vmax) * PAINT_ALPHA if vmax > 0 else np.zeros(shape)
        rgb = np.asarray(to_rgb(color))
        out = alpha[..., None] * rgb + (1.0 - alpha[..., None]) * out
    return out


def _require_frames(manifest, time_indices):
    needed = [
        (i, k) for k in sorted(set(time_indices))
        for i in range(manifest.n_populations)
    ]
    absent = missing_frames(manifest, needed)
    if absent:
        listed = ", ".join(f"(population {i}, k={k})" for i, k in absent)
        raise FileNotFoundError(f"missing frames: {listed}")


def build_panel_figure(spec):
    """Compose the figure without writing it; returns (figure, report)."""
    manifest = load_manifest(spec.manifest_path)
    if len(manifest.points_per_axis) != 2:
        raise ValueError(
            f"panels need a 2-axis grid; run has {len(manifest.points_per_axis)}"
        )
    snapped = snap_time_indices(manifest, spec.times)
    _require_frames(manifest, snapped)
    colors = population_colors(manifest.n_populations, spec.colors)
    dt = manifest.step_size
    labels = tuple(k * dt for k in snapped)

    n = len(snapped)
    nrows = 1 if n == 1 else 2
    ncols = math.ceil(n / nrows)
    (x_lo, x_hi), (y_lo, y_hi) = manifest.extent_per_axis
    fig, axes = plt.subplots(
        nrows,
        ncols,
        figsize=(4.0 * ncols, 4.0 * nrows),
        squeeze=False,
        constrained_layout=True,
    )
    for idx, (k, label) in enumerate(zip(snapped, labels)):
        ax = axes.flat[idx]
        fields = [
            frame_grid(manifest, i, k) for i in range(manifest.n_populations)
        ]
        image = compose_panel(fields, colors, spec.threshold, spec.style)
        # frames index [x, y]; imshow wants [row=y, col=x] with y upward
        ax.imshow(
            image.swapaxes(0, 1),
            origin="lower",
            extent=(x_lo, x_hi, y_lo, y_hi),
            interpolation="nearest",
        )
        ax.set_title(f"t = {label:g}")
        ax.set_xticks(())
        ax.set_yticks(())
    for idx in range(n, nrows * ncols):
        axes.flat[idx].axis("off")
    handles = [
        Patch(facecolor=c, label=f"population {i}") for i, c in enumerate(colors)
    ]
    fig.legend(handles=handles, loc="outside lower center",
               ncols=len(handles), frameon=False)
    report = RenderReport(
        out_path=spec.out_path,
        time_indices=snapped,
        labels=labels,
        colors=colors,
        n_panels=n,
    )
    return fig, report


def render_panels(spec):
    """Write the composite panel figure; returns a RenderReport."""
    fig, report = build_panel_figure(spec)
    try:
        kwargs = {}
        if spec.out_path.lower().endswith(".png"):
            # drop the library version stamp so reruns are byte-identical
            kwargs["metadata"] = {"Software": None}
        fig.savefig(spec.out_path, dpi=100, **kwargs)
    finally:
        plt.close(fig)
    return report


def render_animation(spec):
    """Write a GIF with one frame per saved time slice; returns a report."""
    manifest = load_manifest(spec.manifest_path)
    if len(manifest.points_per_axis) != 2:
        raise ValueError(
            f"animation needs a 2-axis grid; run has {len(manifest.points_per_axis)}"
        )
    ks = manifest.time_indices
    if not ks:
        raise ValueError(f"{manifest.path}: manifest lists no frames")
    _require_frames(manifest, ks)
    colors = population_colors(manifest.n_populations, spec.colors)
    dt = manifest.step_size

    images = []
    for k in ks:
        fields = [
            frame_grid(manifest, i, k) for i in range(manifest.n_populations)
        ]
        rgb = compose_panel(fields, colors, spec.threshold, spec.style)
        # [x, y] -> [row=y downward, col=x] for image files
        pixels = np.flip(rgb.swapaxes(0, 1), axis=0)
        pixels = np.kron(pixels, np.ones((ANIMATION_SCALE, ANIMATION_SCALE, 1)))
        # time progress strip; also keeps every frame distinct, since the
        # GIF encoder silently merges frames whose pixels repeat exactly
        strip = np.ones((PROGRESS_STRIP_PX, pixels.shape[1], 3))
        fill = int(round(pixels.shape[1] * (k / manifest.n_steps)))
        strip[:, :fill] = 0.2
        pixels = np.concatenate([pixels, strip], axis=0)
        images.append(
            Image.fromarray((np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8))
        )
    images[0].save(
        spec.out_path,
        save_all=True,
        append_images=images[1:],
        duration=ANIMATION_FRAME_MS,
        loop=0,
    )
    return RenderReport(
        out_path=spec.out_path,
        time_indices=tuple(ks),
        labels=tuple(k * dt for k in ks),
        colors=colors,
        n_panels=len(ks),
    )
