"""Built-in object contours for demos and experiment suites.

Four small connector-style parts, 40-60 mm long, each a single planar
cross-section in the body frame. Dimensions are representative rather than
measured from any specific part; suites only need a spread of asymmetric
shapes whose grids land in the intended cell-count band.
"""
from __future__ import annotations

import json
from pathlib import Path

from .geometry import ObjectModel, object_from_dict

# Vertices counter-clockwise, meters. Long axis along x. Each profile tapers
# strongly from a thick head to a thin tail: the silhouette is far from
# symmetric under a half turn, which keeps single-mask pose beliefs unimodal,
# and no two vertices sit close enough to make a rest state degenerate.
_CONTOURS: dict[str, list[list[float]]] = {
    "aux": [
        [-0.0260, -0.0070],
        [0.0250, -0.0026],
        [0.0250, 0.0022],
        [-0.0260, 0.0066],
    ],
    "pin": [
        [-0.0205, -0.0052],
        [0.0205, -0.0018],
        [0.0205, 0.0016],
        [-0.0205, 0.0050],
    ],
    "stud": [
        [-0.0245, -0.0062],
        [0.0045, -0.0070],
        [0.0245, -0.0014],
        [0.0245, 0.0018],
        [-0.0245, 0.0058],
    ],
    "usb": [
        [-0.0290, -0.0078],
        [0.0060, -0.0066],
        [0.0290, -0.0016],
        [0.0290, 0.0020],
        [-0.0290, 0.0072],
    ],
}

BUILTIN_NAMES: tuple[str, ...] = tuple(sorted(_CONTOURS))


def builtin_dict(name: str) -> dict:
    """JSON-ready contour record for a built-in object."""
    if name not in _CONTOURS:
        raise KeyError(f"unknown object {name!r}; have {BUILTIN_NAMES}")
    return {"name": name, "vertices": [list(v) for v in _CONTOURS[name]]}


def builtin_object(name: str) -> ObjectModel:
    return object_from_dict(builtin_dict(name))


def write_builtin(name: str, directory) -> Path:
    """Materialize a built-in contour as a JSON file; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.json"
    path.write_text(json.dumps(builtin_dict(name), indent=1) + "\n")
    return path
