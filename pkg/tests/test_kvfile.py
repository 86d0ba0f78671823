import pytest
from hypothesis import given, strategies as st

from edgenids.errors import FormatError, MissingFile
from edgenids.kvfile import format_kv, parse_kv, read_kv, write_kv


def test_parse_ignores_comments_and_blanks():
    assert parse_kv("# hi\n\na = 1\n b=two words \n") == {"a": "1", "b": "two words"}


@pytest.mark.parametrize("text", ["novalue\n", " = 3\n", "a = 1\na = 2\n"])
def test_parse_errors(text):
    with pytest.raises(FormatError):
        parse_kv(text)


def test_file_round_trip(tmp_path):
    write_kv(tmp_path / "f", [("x", 1), ("y", "a=b")], header="made by test")
    assert (tmp_path / "f").read_text().startswith("# made by test\n")
    assert read_kv(tmp_path / "f") == {"x": "1", "y": "a=b"}


def test_missing(tmp_path):
    with pytest.raises(MissingFile):
        read_kv(tmp_path / "nope")


def test_multiline_value_rejected():
    with pytest.raises(FormatError):
        format_kv({"a": "1\n2"})


keys = st.text("abcdefghijklmnopqrstuvwxyz._0123456789", min_size=1, max_size=12)
values = st.text(st.characters(blacklist_categories=("Cc", "Cs", "Zl", "Zp")), max_size=20).map(str.strip)


@given(st.dictionaries(keys, values, max_size=8))
def test_format_parse_round_trip(d):
    assert parse_kv(format_kv(d)) == d
