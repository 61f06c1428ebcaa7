"""Extended-XYZ reading and writing.

Only the subset needed here is supported: ``Lattice`` (nine floats, lattice
vectors as consecutive triples) and ``Properties=species:S:1:pos:R:3``.
Other comment-line key/value pairs are kept verbatim in ``Structure.info``.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .elements import atomic_number, symbol
from .structure import Structure

PROPERTIES = "species:S:1:pos:R:3"

_BARE = re.compile(r"^[A-Za-z0-9_.+\-:/]+$")


class ExtxyzParseError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _value_str(value) -> str:
    if isinstance(value, bool):
        return "T" if value else "F"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    text = str(value)
    if text and _BARE.match(text) and isinstance(_coerce(text), str):
        return text
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _coerce(text: str):
    """Restore bool/int/float values written by :func:`write_extxyz`."""
    if text == "T":
        return True
    if text == "F":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def comment_line(s: Structure, metadata: dict | None = None) -> str:
    parts = []
    if s.pbc:
        parts.append('Lattice="' + " ".join(_fmt(x) for x in s.cell.ravel()) + '"')
    parts.append(f"Properties={PROPERTIES}")
    merged = dict(s.info)
    merged.update(metadata or {})
    for key, value in merged.items():
        if key in ("Lattice", "Properties", "pbc"):
            continue
        if not key or not _BARE.match(key):
            raise ValueError(f"metadata key {key!r} is not a valid extxyz key")
        parts.append(f"{key}={_value_str(value)}")
    if s.pbc:
        parts.append('pbc="T T T"')
    return " ".join(parts)


def write_extxyz(path, structures, metadata=None) -> None:
    """Write frames in order.  ``metadata`` is one dict per frame (or None)."""
    structures = list(structures)
    if metadata is not None and len(metadata) != len(structures):
        raise ValueError("metadata must have one entry per structure")
    lines = []
    for k, s in enumerate(structures):
        lines.append(str(len(s)))
        lines.append(comment_line(s, None if metadata is None else metadata[k]))
        for z, r in zip(s.species, s.positions):
            lines.append(f"{symbol(int(z))} {_fmt(r[0])} {_fmt(r[1])} {_fmt(r[2])}")
    text = "\n".join(lines) + ("\n" if lines else "")
    Path(path).write_text(text)


_TOKEN = re.compile(r'\s*([^\s="]+)(?:=(?:"((?:[^"\\]|\\.)*)"|([^\s"]*)))?(?=\s|$)')
_UNESCAPE = re.compile(r"\\(.)")


def _parse_comment(path, line_no, text):
    """Key/value pairs of a comment line.

    Bare values come back as text to be coerced later; quoted values are
    returned as ``_Quoted`` so they always stay strings.
    """
    fields = {}
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExtxyzParseError(path, line_no, f"cannot parse comment line near column {pos + 1} (unbalanced quotes?)")
        key, quoted, bare = m.groups()
        if quoted is not None:
            fields[key] = _Quoted(_UNESCAPE.sub(r"\1", quoted))
        elif bare is not None:
            fields[key] = bare
        else:
            fields[key] = True  # bare flag
        pos = m.end()
    return fields


class _Quoted(str):
    pass


def read_extxyz(path) -> list[Structure]:
    path = Path(path)
    lines = path.read_text().splitlines()
    frames = []
    k = 0
    while k < len(lines):
        if not lines[k].strip():
            k += 1
            continue
        try:
            n = int(lines[k].strip())
        except ValueError:
            raise ExtxyzParseError(path, k + 1, f"expected an atom count, got {lines[k]!r}") from None
        if n < 1:
            raise ExtxyzParseError(path, k + 1, "atom count must be positive")
        if k + 1 >= len(lines):
            raise ExtxyzParseError(path, k + 2, "missing comment line")
        fields = _parse_comment(path, k + 2, lines[k + 1])
        props = fields.pop("Properties", PROPERTIES)
        if props != PROPERTIES:
            raise ExtxyzParseError(path, k + 2, f"unsupported Properties {props!r}")
        cell = None
        if "Lattice" in fields:
            try:
                vals = [float(x) for x in str(fields.pop("Lattice")).split()]
            except ValueError:
                raise ExtxyzParseError(path, k + 2, "Lattice must hold 9 numbers") from None
            if len(vals) != 9:
                raise ExtxyzParseError(path, k + 2, f"Lattice must hold 9 numbers, got {len(vals)}")
            cell = np.array(vals).reshape(3, 3)
        fields.pop("pbc", None)
        info = {}
        for key, v in fields.items():
            if isinstance(v, _Quoted):
                info[key] = str(v)
            elif isinstance(v, str):
                info[key] = _coerce(v)
            else:
                info[key] = v
        species = []
        pos = np.empty((n, 3))
        for a in range(n):
            ln = k + 2 + a
            if ln >= len(lines):
                raise ExtxyzParseError(path, ln + 1, f"expected {n} atom lines, file ended after {a}")
            cols = lines[ln].split()
            if len(cols) < 4:
                raise ExtxyzParseError(path, ln + 1, f"atom line needs species and 3 coordinates: {lines[ln]!r}")
            try:
                species.append(atomic_number(cols[0]))
                pos[a] = [float(c) for c in cols[1:4]]
            except ValueError as exc:
                raise ExtxyzParseError(path, ln + 1, str(exc)) from None
        try:
            frames.append(Structure(species, pos, cell, info))
        except ValueError as exc:
            raise ExtxyzParseError(path, k + 1, str(exc)) from None
        k += 2 + n
    return frames
