"""Chemical element symbols and atomic numbers."""

from __future__ import annotations

SYMBOLS = (
    "X",
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)

ATOMIC_NUMBERS = {sym: z for z, sym in enumerate(SYMBOLS) if z > 0}


def atomic_number(value) -> int:
    """Accept a symbol ("C"), a numeric string ("6") or an int."""
    if isinstance(value, str):
        v = value.strip()
        if v.isdigit():
            z = int(v)
        else:
            key = v[:1].upper() + v[1:].lower()
            if key not in ATOMIC_NUMBERS:
                raise ValueError(f"unknown element symbol {value!r}")
            return ATOMIC_NUMBERS[key]
    else:
        z = int(value)
    if not 1 <= z <= 118:
        raise ValueError(f"atomic number {z} outside 1-118")
    return z


def symbol(z: int) -> str:
    return SYMBOLS[atomic_number(z)]


def parse_formula(text: str) -> dict[int, int]:
    """Parse a simple formula such as ``"Li2S"`` or ``"C"`` into {Z: count}."""
    import re

    tokens = re.findall(r"([A-Z][a-z]?)(\d*)", text.strip())
    if not tokens or "".join(a + b for a, b in tokens) != text.strip():
        raise ValueError(f"cannot parse formula {text!r}")
    comp: dict[int, int] = {}
    for sym, count in tokens:
        z = atomic_number(sym)
        comp[z] = comp.get(z, 0) + (int(count) if count else 1)
    return comp


def format_formula(comp: dict[int, int]) -> str:
    return "".join(f"{SYMBOLS[z]}{n if n != 1 else ''}" for z, n in sorted(comp.items()))
