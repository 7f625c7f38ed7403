"""Spectral readings, material classes, and the action-material table.

Readings are 331-channel vectors in arbitrary units (the format a handheld
spectrometer exports).  A deterministic synthetic generator provides
desk-scale stand-ins: each material class owns a fixed set of Gaussian
bumps, individual readings add a smooth per-seed baseline drift plus 5%
channel noise, so classes are separable by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ParseError
from .seeding import derive_seed, make_rng

N_CHANNELS = 331

ACTIONS = ("Hit", "Cut", "Scoop", "Flip", "Poke", "Rake")


class MaterialClass(str, Enum):
    METAL = "metal"
    WOOD = "wood"
    PLASTIC = "plastic"
    PAPER = "paper"
    FOAM = "foam"

    @classmethod
    def parse(cls, token: str) -> "MaterialClass":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise ValueError(f"unknown material class {token!r}")


@dataclass(frozen=True)
class SpectralReading:
    values: np.ndarray
    material: MaterialClass | None = None
    object_id: str = ""

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.shape != (N_CHANNELS,):
            raise ValueError(
                f"spectral reading must have {N_CHANNELS} channels, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("spectral reading contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# CSV I/O: header `material,object_id,v0,...,v330`
# ---------------------------------------------------------------------------

_HEADER = ["material", "object_id"] + [f"v{i}" for i in range(N_CHANNELS)]


def load_spectra(path) -> list[SpectralReading]:
    path = Path(path)
    readings = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if rowno == 1:
                if [c.strip() for c in row[:2]] != ["material", "object_id"]:
                    raise ParseError(path, rowno, "missing spectra header")
                if len(row) != N_CHANNELS + 2:
                    raise ParseError(
                        path, rowno,
                        f"header names {len(row) - 2} channels, expected {N_CHANNELS}",
                    )
                continue
            if len(row) != N_CHANNELS + 2:
                raise ParseError(
                    path, rowno,
                    f"expected {N_CHANNELS + 2} columns, got {len(row)}",
                )
            token = row[0].strip()
            try:
                material = MaterialClass.parse(token) if token else None
            except ValueError as exc:
                raise ParseError(path, rowno, str(exc))
            try:
                values = np.array([float(v) for v in row[2:]])
            except ValueError:
                raise ParseError(path, rowno, "non-numeric channel value")
            readings.append(
                SpectralReading(values=values, material=material, object_id=row[1])
            )
    return readings


def save_spectra(readings, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for r in readings:
            material = r.material.value if r.material is not None else ""
            writer.writerow(
                [material, r.object_id] + [repr(float(v)) for v in r.values]
            )


# ---------------------------------------------------------------------------
# synthetic spectra
# ---------------------------------------------------------------------------

# (center channel, width, amplitude) per class; centers are class-fixed so
# classes stay separable no matter the seed.
_TEMPLATES = {
    MaterialClass.METAL: [(38, 9.0, 1.10), (126, 12.0, 0.85), (262, 10.0, 0.95)],
    MaterialClass.WOOD: [(72, 14.0, 0.90), (181, 11.0, 1.05), (238, 16.0, 0.60),
                         (305, 9.0, 0.75)],
    MaterialClass.PLASTIC: [(55, 10.0, 0.70), (142, 9.0, 1.00), (219, 13.0, 0.80),
                            (291, 11.0, 0.55)],
    MaterialClass.PAPER: [(94, 12.0, 0.95), (203, 15.0, 0.70), (283, 10.0, 1.00)],
    MaterialClass.FOAM: [(27, 8.0, 0.60), (108, 12.0, 0.85), (168, 10.0, 0.70),
                         (247, 14.0, 0.90), (318, 9.0, 0.65)],
}


def class_template(material: MaterialClass) -> np.ndarray:
    """Noise-free signature of a material class."""
    channels = np.arange(N_CHANNELS, dtype=np.float64)
    signal = np.zeros(N_CHANNELS)
    for center, width, amplitude in _TEMPLATES[material]:
        signal += amplitude * np.exp(-0.5 * ((channels - center) / width) ** 2)
    return signal


def synth_spectrum(material: MaterialClass, rng_seed: int) -> SpectralReading:
    """Deterministic synthetic reading for one material class."""
    material = MaterialClass(material)
    rng = make_rng(derive_seed(rng_seed, "spectrum", material.value))
    template = class_template(material)
    peak = float(template.max())

    channels = np.arange(N_CHANNELS, dtype=np.float64) / (N_CHANNELS - 1)
    drift = (
        rng.uniform(-0.08, 0.08) * peak
        + rng.uniform(-0.10, 0.10) * peak * channels
        + rng.uniform(-0.06, 0.06) * peak
        * np.sin(2.0 * np.pi * (channels * rng.uniform(0.5, 2.0) + rng.uniform(0, 1)))
    )
    noise = rng.normal(0.0, 0.05 * peak, N_CHANNELS)
    return SpectralReading(
        values=template + drift + noise,
        material=material,
        object_id=f"{material.value}-{rng_seed:03d}",
    )


# ---------------------------------------------------------------------------
# action-material compatibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompatibilityTable:
    """Map action name -> set of appropriate material classes."""

    table: dict

    def __post_init__(self):
        checked = {}
        for action, classes in self.table.items():
            classes = frozenset(MaterialClass(c) for c in classes)
            if not classes:
                raise ValueError(f"action {action!r} has an empty material set")
            if len(classes) == len(MaterialClass):
                raise ValueError(
                    f"action {action!r} accepts every material; set must be a strict subset"
                )
            checked[str(action)] = classes
        object.__setattr__(self, "table", checked)

    def compatible(self, action: str, material: MaterialClass) -> bool:
        return MaterialClass(material) in self.table[action]

    def classes_for(self, action: str) -> frozenset:
        return self.table[action]

    @property
    def actions(self) -> tuple:
        return tuple(self.table)


def default_compatibility() -> CompatibilityTable:
    """Built-in table.

    Hit accepting metal and wood (never foam) and Cut requiring metal are
    fixed ground truths; the remaining rows are configurable defaults that
    users can replace via a table file.
    """
    m, w, p = MaterialClass.METAL, MaterialClass.WOOD, MaterialClass.PLASTIC
    return CompatibilityTable({
        "Hit": {m, w},
        "Cut": {m},
        "Scoop": {m, p, w},
        "Flip": {m, p, w},
        "Poke": {m, w, p},
        "Rake": {m, p, w},
    })


def load_compatibility(path) -> CompatibilityTable:
    """Parse a table file: one `action: class[,class...]` line per action."""
    path = Path(path)
    table = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ParseError(path, lineno, "expected 'action: class[,class...]'")
            action, _, rest = line.partition(":")
            action = action.strip()
            if not action:
                raise ParseError(path, lineno, "empty action name")
            try:
                classes = {MaterialClass.parse(tok) for tok in rest.split(",") if tok.strip()}
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc))
            if action in table:
                raise ParseError(path, lineno, f"duplicate action {action!r}")
            table[action] = classes
    return CompatibilityTable(table)


def save_compatibility(table: CompatibilityTable, path) -> None:
    with open(path, "w") as fh:
        for action in table.actions:
            classes = ",".join(sorted(c.value for c in table.classes_for(action)))
            fh.write(f"{action}: {classes}\n")
