import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from polyens.output import (
    atomic_write_bytes,
    atomic_write_text,
    canonical_hash,
    read_spectra_binary,
    read_spectra_csv,
    write_spectra_binary,
    write_spectra_csv,
)


def test_hash_ignores_key_order():
    assert canonical_hash({"a": 1, "b": [1, 2]}) == canonical_hash({"b": [1, 2], "a": 1})


def test_hash_sees_values():
    assert canonical_hash({"a": 1}) != canonical_hash({"a": 2})


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "sub" / "out.txt"
    atomic_write_text(p, "one")
    atomic_write_text(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["out.txt"]


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    p = tmp_path / "out.bin"
    atomic_write_bytes(p, b"old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_bytes(p, b"new")
    assert p.read_bytes() == b"old"
    assert os.listdir(tmp_path) == ["out.bin"]


def test_csv_layout():
    text = write_spectra_csv([[1.0, 2.5]], "abc", 7)
    assert text.splitlines() == ["# config-hash abc", "# seed 7", "x1,x2", "1.0,2.5"]


finite = st.floats(-1e300, 1e300, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(S=hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6),
                    elements=finite),
       seed=st.one_of(st.none(), st.integers(0, 2 ** 64 - 1)))
def test_csv_round_trip(S, seed):
    back, h, s = read_spectra_csv(write_spectra_csv(S, "h", seed))
    assert np.array_equal(back, S) and h == "h" and s == seed


@settings(max_examples=40, deadline=None)
@given(S=hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6),
                    elements=finite),
       seed=st.integers(0, 2 ** 64 - 1))
def test_binary_round_trip(S, seed):
    back, h, s = read_spectra_binary(write_spectra_binary(S, "h", seed))
    assert np.array_equal(back, S) and h == "h" and s == seed


def test_binary_is_column_major():
    data = write_spectra_binary([[1.0, 2.0], [3.0, 4.0]], "h", 0)
    body = data.split(b"\n", 2)[2]
    assert np.array_equal(np.frombuffer(body, "<f8"), [1.0, 3.0, 2.0, 4.0])


def test_binary_magic_checked():
    with pytest.raises(ValueError):
        read_spectra_binary(b"garbage\n")
