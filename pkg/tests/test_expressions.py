import pytest

from coordsem.expressions import (
    ExpressionError,
    compile_expression,
    counters_used,
    evaluate,
    parse_expression,
)

ZERO = {"#SourceIn": 0, "#SourceAfter": 0, "#SourceBefore": 0,
        "#SourceTotal": 0, "#TargetActive": 0}


def counts(**kw):
    out = dict(ZERO)
    for key, value in kw.items():
        out["#" + key] = value
    return out


def test_at_least_one_sent():
    expr = parse_expression("#SourceIn + #SourceAfter >= 1")
    assert evaluate(expr, counts(SourceIn=1)) is True
    assert evaluate(expr, counts(SourceAfter=1)) is True
    assert evaluate(expr, ZERO) is False


def test_empty_sources_unfulfilled():
    expr = parse_expression("#SourceIn >= 1")
    assert evaluate(expr, ZERO) is False


def test_majority_with_skipped_complement():
    # members whose source state was skipped took the other branch
    expr = parse_expression(
        "(#SourceIn + #SourceAfter >= 3) | "
        "(#SourceIn + #SourceAfter > #SourceTotal - #SourceIn - #SourceAfter - #SourceBefore)")
    assert evaluate(expr, counts(SourceIn=3, SourceTotal=3)) is True
    assert evaluate(expr, counts(SourceIn=2, SourceTotal=3)) is True   # 2 > 1 rejected
    assert evaluate(expr, counts(SourceIn=1, SourceTotal=3)) is False  # 1 > 2 fails
    assert evaluate(expr, counts(SourceIn=2, SourceBefore=1, SourceTotal=3)) is True


def test_exclusivity_blocker():
    expr = parse_expression("#TargetActive = 0")
    assert evaluate(expr, ZERO) is True
    assert evaluate(expr, counts(TargetActive=1)) is False


def test_boolean_words_and_symbols_agree():
    a = parse_expression("#SourceIn >= 1 & !(#TargetActive > 0)")
    b = parse_expression("#SourceIn >= 1 and not (#TargetActive > 0)")
    for c in (counts(SourceIn=1), counts(SourceIn=1, TargetActive=2), ZERO):
        assert evaluate(a, c) == evaluate(b, c)


def test_parse_errors():
    for text in ("", "   ", "#SourceIn +", "#Bogus >= 1", "1 + 2", "#SourceIn >= >= 1",
                 "(#SourceIn >= 1", "#SourceIn & 1", "!(#SourceIn)"):
        with pytest.raises(ExpressionError):
            parse_expression(text)


def test_trees_are_shared_and_pure():
    a = parse_expression("#SourceIn >= 1")
    b = parse_expression("#SourceIn >= 1")
    assert a is b
    c = counts(SourceIn=2)
    assert evaluate(a, c) is True
    assert c == counts(SourceIn=2)


def test_compiled_matches_interpreter():
    texts = [
        "#SourceIn + #SourceAfter >= 1",
        "(#SourceIn + #SourceAfter = #SourceTotal) & (#SourceTotal >= 1)",
        "#TargetActive = 0",
        "#SourceTotal - #SourceBefore >= 3",
        "!(#SourceIn < 2) | #SourceAfter = 1",
    ]
    import itertools
    for text in texts:
        expr = parse_expression(text)
        fn = compile_expression(expr)
        for si, sa, sb, ta in itertools.product(range(3), repeat=4):
            st = si + sa + sb + 1
            c = {"#SourceIn": si, "#SourceAfter": sa, "#SourceBefore": sb,
                 "#SourceTotal": st, "#TargetActive": ta}
            assert fn(si, sa, sb, st, ta) == evaluate(expr, c), (text, c)


def test_counters_used():
    expr = parse_expression("#SourceIn + #SourceAfter >= #SourceTotal")
    assert counters_used(expr) == {"#SourceIn", "#SourceAfter", "#SourceTotal"}
