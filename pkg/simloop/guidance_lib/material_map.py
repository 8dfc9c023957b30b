"""
Maps qualitative material descriptors to numerical simulation parameters.

A descriptor is three labels from closed vocabularies (composition, bounce,
roughness). The composition fixes density, base Young's modulus and Poisson
ratio; bounce scales Young's modulus and sets per-step velocity damping;
roughness fixes the friction coefficient. The packaged table holds typical
engineering constants and can be overridden from a JSON file.
"""
import copy
import json
import os
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional

from .exceptions import MaterialError, MaterialTableError


class Composition(str, Enum):
    RUBBER = "rubber"
    WOOD = "wood"
    METAL = "metal"
    PLASTIC = "plastic"
    PLUSH = "plush"
    CERAMIC = "ceramic"
    FOAM = "foam"


class Bounce(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


class Roughness(str, Enum):
    SMOOTH = "smooth"
    MEDIUM = "medium"
    ROUGH = "rough"


def _parse_label(enum_cls, value: Any, kind: str):
    try:
        return enum_cls(str(value).strip().lower())
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise MaterialError(f"Unknown {kind} label '{value}' (expected one of: {allowed})")


@dataclass(frozen=True)
class MaterialDescriptor:
    """The intermediate material description of one object.

    Attributes:
        composition: What the object is made of.
        bounce: How elastic the object looks when it hits something.
        roughness: Surface roughness, which sets friction.
    """
    composition: Composition
    bounce: Bounce
    roughness: Roughness

    @classmethod
    def from_labels(cls, composition: Any, bounce: Any, roughness: Any) -> "MaterialDescriptor":
        """Parses raw label strings, raising `MaterialError` on unknown labels."""
        return cls(
            composition=_parse_label(Composition, composition, "composition"),
            bounce=_parse_label(Bounce, bounce, "bounce"),
            roughness=_parse_label(Roughness, roughness, "roughness"),
        )

    def to_dict(self) -> Dict[str, str]:
        return {
            "composition": self.composition.value,
            "bounce": self.bounce.value,
            "roughness": self.roughness.value,
        }


@dataclass(frozen=True)
class MaterialParams:
    """Physical parameters of an elastic material.

    Attributes:
        density: Mass density rho in kg/m^3 (numerically unchanged in sim units).
        youngs: Young's modulus E in Pa, or in sim units after rescaling.
        poisson: Poisson ratio nu, in [0, 0.5).
        friction: Coulomb friction coefficient mu, >= 0.
        damping: Per-step velocity retention, in (0, 1].
    """
    density: float
    youngs: float
    poisson: float
    friction: float
    damping: float

    def __post_init__(self):
        if not self.density > 0:
            raise MaterialError(f"density must be > 0 (got {self.density})")
        if not self.youngs > 0:
            raise MaterialError(f"Young's modulus must be > 0 (got {self.youngs})")
        if not 0.0 <= self.poisson < 0.5:
            raise MaterialError(f"Poisson ratio must be in [0, 0.5) (got {self.poisson})")
        if not self.friction >= 0:
            raise MaterialError(f"friction must be >= 0 (got {self.friction})")
        if not 0.0 < self.damping <= 1.0:
            raise MaterialError(f"damping must be in (0, 1] (got {self.damping})")

    @property
    def lame_mu(self) -> float:
        return self.youngs / (2.0 * (1.0 + self.poisson))

    @property
    def lame_lambda(self) -> float:
        return self.youngs * self.poisson / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson))

    @property
    def wave_speed(self) -> float:
        """Elastic wave speed sqrt(E / rho) used by the CFL bound."""
        return (self.youngs / self.density) ** 0.5

    def to_dict(self) -> Dict[str, float]:
        return {
            "density": self.density,
            "youngs": self.youngs,
            "poisson": self.poisson,
            "friction": self.friction,
            "damping": self.damping,
        }


DEFAULT_TABLE_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "materials_table.json")


class MaterialTable:
    """An immutable, validated descriptor-to-parameter table.

    Attributes:
        compositions: composition -> (density, youngs, poisson).
        bounce: bounce -> (youngs_scale, damping).
        roughness: roughness -> friction.
    """

    def __init__(self, data: Dict[str, Any], row_lines: Optional[List[int]] = None):
        self._data = copy.deepcopy(data)
        self.compositions: Dict[Composition, tuple] = {}
        self.bounce: Dict[Bounce, tuple] = {}
        self.roughness: Dict[Roughness, float] = {}
        self._validate(row_lines or [])

    def _validate(self, row_lines: List[int]):
        rows = self._data.get("compositions")
        if not isinstance(rows, list):
            raise MaterialTableError("'compositions' must be an array of rows")

        for i, row in enumerate(rows):
            line = row_lines[i] if i < len(row_lines) else None
            try:
                comp = _parse_label(Composition, row["composition"], "composition")
                density, youngs, poisson = float(row["density"]), float(row["youngs"]), float(row["poisson"])
                # Reuse MaterialParams' range checks; friction and damping are placeholders here.
                MaterialParams(density, youngs, poisson, friction=0.0, damping=1.0)
            except KeyError as e:
                raise MaterialTableError(f"row {i} is missing field {e}", line=line)
            except (TypeError, ValueError) as e:
                raise MaterialTableError(f"row {i} has a non-numeric field: {e}", line=line)
            except MaterialError as e:
                raise MaterialTableError(f"row {i} ({row.get('composition')}): {e.message}", line=line)
            self.compositions[comp] = (density, youngs, poisson)

        missing = [c.value for c in Composition if c not in self.compositions]
        if missing:
            raise MaterialTableError(f"table does not cover compositions: {', '.join(missing)}")

        for label, block in self._data.get("bounce", {}).items():
            b = _parse_label(Bounce, label, "bounce")
            scale, damping = float(block["youngs_scale"]), float(block["damping"])
            if not scale > 0 or not 0.0 < damping <= 1.0:
                raise MaterialTableError(f"bounce '{label}' needs youngs_scale > 0 and damping in (0, 1]")
            self.bounce[b] = (scale, damping)
        for label, block in self._data.get("roughness", {}).items():
            r = _parse_label(Roughness, label, "roughness")
            friction = float(block["friction"])
            if friction < 0:
                raise MaterialTableError(f"roughness '{label}' needs friction >= 0")
            self.roughness[r] = friction

        if set(self.bounce) != set(Bounce) or set(self.roughness) != set(Roughness):
            raise MaterialTableError("bounce and roughness blocks must cover their whole vocabularies")

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._data)


def _merge_tables(override: Dict[str, Any], base: Dict[str, Any]) -> Dict[str, Any]:
    """Merges an override table onto a base table, row-wise by composition."""
    merged = copy.deepcopy(base)
    if "compositions" in override:
        by_name = {row["composition"]: dict(row) for row in merged["compositions"]}
        order = [row["composition"] for row in merged["compositions"]]
        for row in override["compositions"]:
            name = str(row.get("composition", "")).strip().lower()
            if name in by_name:
                by_name[name].update(row)
                by_name[name]["composition"] = name
            else:
                # Unknown names are kept so validation can report them with a line number.
                by_name[name] = dict(row)
                order.append(name)
        merged["compositions"] = [by_name[n] for n in order]
    for block in ("bounce", "roughness"):
        for label, values in override.get(block, {}).items():
            merged[block].setdefault(label, {}).update(values)
    return merged


def _composition_row_lines(text: str) -> List[int]:
    """Returns the 1-based line of each `"composition"` key, in file order."""
    return [i + 1 for i, line in enumerate(text.splitlines()) if re.search(r'"composition"\s*:', line)]


_default_table: Optional[MaterialTable] = None


def _read_table_file(path: str):
    """Returns `(data, text)` of a table file."""
    if not os.path.exists(path):
        raise MaterialTableError(f"material table not found at: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MaterialTableError(f"invalid JSON in {path}: {e.msg}", line=e.lineno)
    if not isinstance(data, dict):
        raise MaterialTableError(f"{path} must contain a JSON object", line=1)
    return data, text


def default_table() -> MaterialTable:
    """Returns the packaged materials_table.json, parsed once."""
    global _default_table
    if _default_table is None:
        data, text = _read_table_file(DEFAULT_TABLE_PATH)
        _default_table = MaterialTable(data, row_lines=_composition_row_lines(text))
    return _default_table


def load_material_table(path: str) -> MaterialTable:
    """Loads a material table file, overriding built-in rows by composition.

    Args:
        path: Path to a JSON file with a `compositions` array and optional
            `bounce` / `roughness` modifier blocks.

    Returns:
        A validated `MaterialTable`.

    Raises:
        MaterialTableError: If the file is missing, is not valid JSON, or a row
            fails validation. The error names the line of the offending row.
    """
    data, text = _read_table_file(path)
    lines = _composition_row_lines(text)
    merged = _merge_tables(data, default_table().to_dict())
    # Line numbers follow rows by composition name; built-in rows have none.
    file_rows = data.get("compositions", [])
    line_by_name = {
        str(row.get("composition", "")).strip().lower(): lines[i]
        for i, row in enumerate(file_rows) if i < len(lines)
    }
    row_lines = [line_by_name.get(row["composition"]) for row in merged["compositions"]]
    return MaterialTable(merged, row_lines=row_lines)


def map_descriptor(descriptor: MaterialDescriptor, table: Optional[MaterialTable] = None) -> MaterialParams:
    """Maps a material descriptor to metric physical parameters.

    Composition fixes (density, base E, Poisson ratio); bounce multiplies E and
    sets damping; roughness fixes friction.

    Args:
        descriptor: The parsed descriptor.
        table: The table to use; defaults to the built-in table.

    Returns:
        The `MaterialParams` in metric units.
    """
    table = table or default_table()
    density, youngs, poisson = table.compositions[descriptor.composition]
    youngs_scale, damping = table.bounce[descriptor.bounce]
    friction = table.roughness[descriptor.roughness]
    return MaterialParams(
        density=density,
        youngs=youngs * youngs_scale,
        poisson=poisson,
        friction=friction,
        damping=damping,
    )
