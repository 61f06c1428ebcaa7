import numpy as np
import pytest
from conftest import random_structure

from respmatch import Structure
from respmatch.extxyz import ExtxyzParseError, comment_line, read_extxyz, write_extxyz

TWO_ATOMS = """2
Lattice="3.0 0.0 0.0 0.5 4.0 0.0 0.0 0.0 5.0" Properties=species:S:1:pos:R:3 pseudo_energy=-1.25 converged=T steps=17 seed=7:3 pbc="T T T"
C 0.0 0.0 0.0
O 1.5 2.0 2.5
"""


def assert_same(a, b, tol=1e-8):
    assert a.species.tolist() == b.species.tolist()
    assert a.pbc == b.pbc
    np.testing.assert_allclose(a.positions, b.positions, atol=tol, rtol=0)
    if a.pbc:
        np.testing.assert_allclose(a.cell, b.cell, atol=tol, rtol=0)


class TestRead:
    def test_hand_written_frame(self, tmp_path):
        path = tmp_path / "two.xyz"
        path.write_text(TWO_ATOMS)
        (s,) = read_extxyz(path)
        assert s.species.tolist() == [6, 8]
        np.testing.assert_array_equal(s.cell, [[3.0, 0, 0], [0.5, 4.0, 0], [0, 0, 5.0]])
        np.testing.assert_array_equal(s.positions, [[0, 0, 0], [1.5, 2.0, 2.5]])
        assert s.info == {"pseudo_energy": -1.25, "converged": True, "steps": 17, "seed": "7:3"}

    def test_no_lattice_is_molecule(self, tmp_path):
        path = tmp_path / "m.xyz"
        path.write_text("1\nProperties=species:S:1:pos:R:3\nH 0 0 0\n")
        (s,) = read_extxyz(path)
        assert not s.pbc

    def test_plain_comment_accepted(self, tmp_path):
        path = tmp_path / "m.xyz"
        path.write_text("1\nenergy=2.5\nHe 1 2 3\n\n")
        (s,) = read_extxyz(path)
        assert s.info == {"energy": 2.5} and s.species.tolist() == [2]

    @pytest.mark.parametrize(
        "text, line",
        [
            ("x\n\nH 0 0 0\n", 1),
            ('1\nLattice="1 0 0 0 1 0 0 0"\nH 0 0 0\n', 2),
            ('1\nLattice="1 0 0 0 1 0 0 0 z"\nH 0 0 0\n', 2),
            ("2\n\nH 0 0 0\nH 1 1\n", 4),
            ("2\n\nH 0 0 0\n", 4),
            ("1\n\nXx 0 0 0\n", 3),
            ("1\nProperties=species:S:1:pos:R:3:forces:R:3\nH 0 0 0 1 1 1\n", 2),
            ('1\nnote="unclosed\nH 0 0 0\n', 2),
            ("1\n", 2),
        ],
    )
    def test_errors_carry_line_numbers(self, tmp_path, text, line):
        path = tmp_path / "bad.xyz"
        path.write_text(text)
        with pytest.raises(ExtxyzParseError) as info:
            read_extxyz(path)
        assert info.value.line_no == line
        assert f"bad.xyz:{line}:" in str(info.value)


class TestWrite:
    def test_empty_list_gives_empty_file(self, tmp_path):
        write_extxyz(tmp_path / "e.xyz", [])
        assert (tmp_path / "e.xyz").read_text() == ""
        assert read_extxyz(tmp_path / "e.xyz") == []

    def test_ten_significant_digits(self, tmp_path):
        s = Structure([1], [[1 / 3, 0, -2 / 3]])
        write_extxyz(tmp_path / "d.xyz", [s])
        assert (tmp_path / "d.xyz").read_text().splitlines()[2] == "H 0.3333333333 0 -0.6666666667"

    def test_value_with_spaces_is_quoted(self):
        s = Structure([1], [[0, 0, 0]])
        line = comment_line(s, {"source": 'my file "v2".xyz', "tag": "plain"})
        assert line == 'Properties=species:S:1:pos:R:3 source="my file \\"v2\\".xyz" tag=plain'

    def test_key_with_spaces_rejected(self):
        with pytest.raises(ValueError):
            comment_line(Structure([1], [[0, 0, 0]]), {"bad key": 1})

    def test_metadata_length_checked(self, tmp_path):
        with pytest.raises(ValueError):
            write_extxyz(tmp_path / "x.xyz", [Structure([1], [[0, 0, 0]])], [{}, {}])

    def test_round_trip(self, rng, tmp_path):
        frames = [random_structure(rng, pbc=k % 3 != 0) for k in range(30)]
        meta = [{"pseudo_energy": float(rng.normal()), "converged": bool(k % 2), "steps": k, "label": f"frame {k}"} for k in range(30)]
        write_extxyz(tmp_path / "r.xyz", frames, meta)
        back = read_extxyz(tmp_path / "r.xyz")
        for a, b, m in zip(frames, back, meta):
            assert_same(a, b)
            assert b.info == m

    def test_info_travels_with_structure(self, tmp_path):
        s = Structure([6], [[0, 0, 0]], np.eye(3) * 2, {"seed": "0:4"})
        write_extxyz(tmp_path / "i.xyz", [s], [{"steps": 3}])
        assert read_extxyz(tmp_path / "i.xyz")[0].info == {"seed": "0:4", "steps": 3}

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_extxyz(tmp_path / "missing" / "x.xyz", [Structure([1], [[0, 0, 0]])])
