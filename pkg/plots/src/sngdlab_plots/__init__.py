"""Renders figures from the solver CLI's CSV outputs: log-scale convergence
curves, complex-plane eigenvalue scatters colored by the sign of the real
part, and per-batch-size comparison panels."""

from .figures import (FIGURE_KINDS, FigureSpec, SchemaMismatch, build_figure,
                      render)

__version__ = "0.1.0"

__all__ = ["FIGURE_KINDS", "FigureSpec", "SchemaMismatch", "build_figure",
           "render", "__version__"]
