"""Script entry point: render one figure from a figure-spec JSON file.

Exit codes: 0 success, 1 anything wrong with the spec or its inputs (the
message names the offending file or columns).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import (FIGURE_KINDS, FigureSpec, SchemaMismatch,
                      build_figure, save_figure)

EXAMPLE = {"kind": "eig_scatter", "inputs": ["out/eigenvalues.csv"],
           "out": "figs/eigs.png", "title": "expected step matrix spectrum"}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sngdlab-plots",
        description=f"render a figure ({', '.join(FIGURE_KINDS)}) from solver "
                    "CLI outputs")
    parser.add_argument("spec", help="figure-spec JSON file")
    args = parser.parse_args(argv)
    try:
        path = Path(args.spec)
        if not path.is_file():
            raise FileNotFoundError(f"spec file not found: {args.spec}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"spec is not valid JSON: {exc}") from None
        spec = FigureSpec.from_dict(doc)
        fig, stats = build_figure(spec)
        out = save_figure(fig, spec.out)
        detail = ", ".join(f"{k}={v}" for k, v in stats.items() if k != "kind")
        print(f"wrote {out} ({stats['kind']}: {detail})")
        return 0
    except (SchemaMismatch, FileNotFoundError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"example spec: {json.dumps(EXAMPLE)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
