import random

import pytest

from dermkit.dermeval.evalformat import (
    DIMENSIONS,
    ParseFailure,
    ScoreVector,
    parse_eval,
    render_eval,
)


def grid_vector(rng: random.Random) -> ScoreVector:
    return ScoreVector.from_values(round(rng.randrange(10, 51) / 10.0, 1) for _ in range(6))


class TestScoreVector:
    def test_mean_is_arithmetic_mean(self):
        v = ScoreVector(3.5, 4.0, 3.5, 4.5, 4.0, 4.5)
        assert v.mean == pytest.approx(4.0, abs=1e-9)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            ScoreVector(0.5, 3, 3, 3, 3, 3)
        with pytest.raises(ValueError):
            ScoreVector(3, 3, 3, 3, 3, 5.1)

    def test_from_values_length_checked(self):
        with pytest.raises(ValueError):
            ScoreVector.from_values([3.0] * 5)


class TestRender:
    def test_all_threes(self):
        block = render_eval(ScoreVector(3, 3, 3, 3, 3, 3)).score_block
        lines = block.splitlines()
        assert lines[0] == "Scores:"
        assert len(lines) == 7
        assert all(line.endswith("3.0") for line in lines[1:])

    def test_fixed_dimension_order(self):
        block = render_eval(ScoreVector(1, 2, 3, 4, 5, 1)).score_block
        names = [line.split(":")[0] for line in block.splitlines()[1:]]
        assert tuple(names) == DIMENSIONS

    def test_byte_stable(self):
        v = ScoreVector(3.5, 4.0, 3.5, 4.5, 4.0, 4.5)
        a = render_eval(v, "solid reasoning")
        b = render_eval(v, "solid reasoning")
        assert a.text.encode() == b.text.encode()

    def test_critique_precedes_block(self):
        text = render_eval(ScoreVector(3, 3, 3, 3, 3, 3), "the critique").text
        assert text.startswith("the critique\n\n")


class TestParse:
    def test_example_mean(self):
        text = render_eval(ScoreVector(3.5, 4.0, 3.5, 4.5, 4.0, 4.5)).text
        parsed = parse_eval(text)
        assert isinstance(parsed, ScoreVector)
        assert parsed.mean == pytest.approx(4.0)

    def test_missing_safety_line(self):
        text = render_eval(ScoreVector(3, 3, 3, 3, 3, 3)).text
        text = "\n".join(l for l in text.splitlines() if not l.startswith("Safety:"))
        failure = parse_eval(text)
        assert isinstance(failure, ParseFailure)
        assert failure.missing == ["Safety"]

    def test_out_of_range_is_failure_not_clamped(self):
        text = render_eval(ScoreVector(3, 3, 3, 3, 3, 3)).text.replace(
            "Accuracy: 3.0", "Accuracy: 6"
        )
        failure = parse_eval(text)
        assert isinstance(failure, ParseFailure)
        assert any("Accuracy" in m and "range" in m for m in failure.malformed)

    def test_non_numeric_is_malformed(self):
        text = render_eval(ScoreVector(3, 3, 3, 3, 3, 3)).text.replace(
            "Safety: 3.0", "Safety: high"
        )
        failure = parse_eval(text)
        assert isinstance(failure, ParseFailure)
        assert any("Safety" in m for m in failure.malformed)

    def test_duplicate_line_is_malformed(self):
        text = render_eval(ScoreVector(3, 3, 3, 3, 3, 3)).text + "\nAccuracy: 4.0"
        failure = parse_eval(text)
        assert isinstance(failure, ParseFailure)
        assert any("duplicate" in m for m in failure.malformed)

    def test_parse_tolerates_surrounding_prose(self):
        text = "Overall quite good.\n\n" + render_eval(ScoreVector(2, 3, 4, 5, 1, 2)).text + "\ntrailing note"
        parsed = parse_eval(text)
        assert isinstance(parsed, ScoreVector)
        assert parsed.as_tuple() == (2, 3, 4, 5, 1, 2)

    def test_round_trip_grid_property(self):
        rng = random.Random(0)
        for _ in range(500):
            v = grid_vector(rng)
            out = parse_eval(render_eval(v, "c").text)
            assert isinstance(out, ScoreVector)
            assert out == v
