"""Built-in surfaces and the JSON gallery file format.

A gallery file is one JSON object::

    {"name": str, "genus": 0,
     "gauss":  {"num": [[re, im], ...], "den": [[re, im], ...]},
     "height": {"num": [...], "den": [...]},
     "punctures": [[re, im], ...],
     "puncture_at_infinity": bool}

Coefficients are in ascending degree; ``height`` is the coefficient of ``dz``.
Unknown keys are rejected.  Every load runs the period and regularity checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import GalleryFormatError
from .meromorphic import Differential, RationalMap
from .weierstrass import WeierstrassData, check_regularity, period_closure_check

TOP_KEYS = {"name", "genus", "gauss", "height", "punctures", "puncture_at_infinity"}
MAP_KEYS = {"num", "den"}


@dataclass(frozen=True)
class SurfaceFacts:
    """What the literature states about a gallery surface (not computed here)."""

    known_index: Optional[int]
    embedded: bool
    # Non-flat Gauss map with branch values on a great circle: index = 2d - 1.
    equator_rule: bool


FACTS = {
    "plane": SurfaceFacts(0, True, False),
    "catenoid": SurfaceFacts(1, True, True),
    "enneper": SurfaceFacts(1, False, True),
    "jorge-meeks-3": SurfaceFacts(3, False, True),
    "jorge-meeks-4": SurfaceFacts(5, False, True),
    "jorge-meeks-5": SurfaceFacts(7, False, True),
}

BUILTIN = tuple(FACTS)


def _complex_list(obj, where: str) -> np.ndarray:
    if not isinstance(obj, list) or not obj:
        raise GalleryFormatError(f"{where}: expected a non-empty list of [re, im] pairs")
    out = []
    for pair in obj:
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, (int, float)) for x in pair)):
            raise GalleryFormatError(f"{where}: bad entry {pair!r}")
        out.append(complex(pair[0], pair[1]))
    return np.array(out, dtype=complex)


def _rational(obj, where: str) -> RationalMap:
    if not isinstance(obj, dict) or set(obj) != MAP_KEYS:
        raise GalleryFormatError(f"{where}: expected exactly the keys {sorted(MAP_KEYS)}")
    return RationalMap(_complex_list(obj["num"], where + ".num"), _complex_list(obj["den"], where + ".den"))


def parse(obj: dict, validate: bool = True) -> WeierstrassData:
    if not isinstance(obj, dict):
        raise GalleryFormatError("gallery entry must be a JSON object")
    unknown = set(obj) - TOP_KEYS
    missing = TOP_KEYS - set(obj)
    if unknown:
        raise GalleryFormatError(f"unknown fields: {sorted(unknown)}")
    if missing:
        raise GalleryFormatError(f"missing fields: {sorted(missing)}")
    if not isinstance(obj["name"], str) or not isinstance(obj["genus"], int):
        raise GalleryFormatError("name must be a string and genus an integer")
    if not isinstance(obj["puncture_at_infinity"], bool):
        raise GalleryFormatError("puncture_at_infinity must be a boolean")
    punct = obj["punctures"]
    if not isinstance(punct, list):
        raise GalleryFormatError("punctures must be a list")
    punctures = _complex_list(punct, "punctures") if punct else np.zeros(0, dtype=complex)
    data = WeierstrassData(
        gauss=_rational(obj["gauss"], "gauss"),
        height=Differential(_rational(obj["height"], "height")),
        punctures=tuple(punctures),
        puncture_at_infinity=obj["puncture_at_infinity"],
        genus=obj["genus"],
        name=obj["name"],
    )
    if validate:
        check_regularity(data)
        period_closure_check(data)
    return data


def _pairs(c) -> list:
    return [[float(np.real(x)), float(np.imag(x))] for x in np.atleast_1d(c)]


def to_json(data: WeierstrassData) -> dict:
    return {
        "name": data.name,
        "genus": data.genus,
        "gauss": {"num": _pairs(data.gauss.num), "den": _pairs(data.gauss.den)},
        "height": {"num": _pairs(data.height.coefficient.num), "den": _pairs(data.height.coefficient.den)},
        "punctures": _pairs(data.punctures) if data.punctures else [],
        "puncture_at_infinity": data.puncture_at_infinity,
    }


def load_file(path, validate: bool = True) -> WeierstrassData:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GalleryFormatError(f"{path}: {exc}") from exc
    return parse(obj, validate)


_cache: dict = {}


def load(name: str) -> WeierstrassData:
    """Load a built-in surface by name (validated once, then cached)."""
    if name not in FACTS:
        raise GalleryFormatError(f"unknown surface {name!r}; built-ins: {', '.join(BUILTIN)}")
    if name not in _cache:
        text = resources.files("minlab.data").joinpath(f"{name}.json").read_text()
        _cache[name] = parse(json.loads(text))
    return _cache[name]


def facts(name: str) -> Optional[SurfaceFacts]:
    return FACTS.get(name)
