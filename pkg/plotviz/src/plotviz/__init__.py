"""Batch figure renderer for the simulator CLI's CSV/JSON outputs."""

from .figures import (
    ColumnError,
    FigureSpec,
    RenderResult,
    plot_memory,
    plot_sweeps,
    plot_trajectory,
)

__all__ = [
    "ColumnError",
    "FigureSpec",
    "RenderResult",
    "plot_memory",
    "plot_sweeps",
    "plot_trajectory",
]
