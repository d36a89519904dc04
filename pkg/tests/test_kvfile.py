"""Tests for key-value configuration files."""

import pytest

from app.errors import ConfigError
from app.utils.kvfile import format_kv, parse_kv, read_kv, to_bool, to_ints, to_matrix


def test_comments_blank_lines_and_lists():
    text = "# desk run\n\nn = 40\ndeltas = 1,4,8  # widths\nbeta = 0.5,1;2,3\n"
    values = parse_kv(text)
    assert values == {"n": "40", "deltas": "1,4,8", "beta": "0.5,1;2,3"}
    assert to_ints(values["deltas"]) == [1, 4, 8]
    assert to_matrix(values["beta"]) == [[0.5, 1.0], [2.0, 3.0]]


def test_file_and_text_agree(tmp_path):
    text = format_kv({"n": 40, "alphas": [0.1, 2.5], "confounded": True}, header="sweep")
    path = tmp_path / "sweep.kv"
    path.write_text(text)
    assert read_kv(path) == parse_kv(text) == {
        "n": "40", "alphas": "0.1,2.5", "confounded": "true"}
    assert to_bool(read_kv(path)["confounded"])


def test_later_assignment_wins():
    assert parse_kv("n = 1\nn = 2\n") == {"n": "2"}


def test_key_without_value():
    with pytest.raises(ConfigError):
        parse_kv("n = 1\nreplications\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_kv(tmp_path / "absent.kv")


def test_typed_converters_reject_garbage():
    with pytest.raises(ConfigError):
        to_ints("1,x")
    with pytest.raises(ConfigError):
        to_bool("maybe")
