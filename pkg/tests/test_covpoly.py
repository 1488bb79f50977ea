import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semicov import covpoly
from semicov.covpoly import (
    CovMonomial,
    PolyParseError,
    Word,
    adjoint,
    apply_lambda,
    b_var,
    degree,
    depth,
    evaluate,
    format_poly,
    multiply,
    one,
    parse_poly,
    x_var,
)
from semicov.partitions import PairPartition, PartitionError

from _util import rand_hermitian, random_kraus_covariance


# -- algebra -----------------------------------------------------------------


def test_unit_is_neutral():
    f = multiply(b_var("w"), x_var("i"))
    assert multiply(one(), f) == f
    assert multiply(f, one()) == f


def test_plain_word_product():
    f = multiply(b_var("w"), b_var("w"))
    (t,) = f.terms
    assert t.pairing.length == 0
    assert len(t.words[0]) == 2


def test_lambda_product_shape():
    f = multiply(apply_lambda("i", "i", one()), apply_lambda("j", "j", one()))
    (t,) = f.terms
    assert t.k == 2
    assert t.pairing.blocks == ((1, 2), (3, 4))
    assert t.indices == ("i", "i", "j", "j")
    assert all(len(w) == 0 for w in t.words)


def test_nested_lambda_shape():
    f = apply_lambda("i", "j", apply_lambda("p", "q", b_var("w")))
    (t,) = f.terms
    assert t.k == 2
    assert t.pairing.blocks == ((1, 4), (2, 3))
    assert t.indices == ("i", "p", "q", "j")


def test_apply_lambda_base_case():
    f = apply_lambda("i", "j", one())
    (t,) = f.terms
    assert t.pairing.blocks == ((1, 2),)
    assert t.indices == ("i", "j")


def test_adjoint_examples():
    t = b_var("w")
    assert format_poly(adjoint(t)) == "b:w*"
    lam = apply_lambda("i", "j", t)
    (term,) = adjoint(lam).terms
    assert term.indices == ("j", "i")
    assert term.words[1].letters[0].star


def test_crossing_pairing_rejected_at_type_level():
    with pytest.raises(PartitionError):
        CovMonomial(
            1.0,
            (Word(),) * 5,
            PairPartition.from_blocks([(1, 3), (2, 4)]),
            ("i", "j", "i", "j"),
        )


def test_depth_degree_examples():
    f = multiply(b_var("w"), b_var("s"))
    assert depth(f) == 0 and degree(f) == 2
    nested = apply_lambda("i", "j", apply_lambda("p", "q", one()))
    assert depth(nested) == 2
    side = multiply(apply_lambda("i", "i", one()), apply_lambda("j", "j", one()))
    assert depth(side) == 1
    assert depth(covpoly.CovPolynomial()) == 0
    assert degree(covpoly.CovPolynomial()) == 0


def test_depth_increases_by_one_and_degree_adds():
    f = multiply(x_var("i"), x_var("i"))
    assert depth(apply_lambda("i", "j", f)) == depth(f) + 1
    g = apply_lambda("i", "i", b_var("w"))
    assert depth(multiply(f, g)) == max(depth(f), depth(g))
    assert degree(multiply(f, g)) == degree(f) + degree(g)


# -- random polynomial machinery ----------------------------------------------

SYMS = ("1", "2")
OMEGAS = ("u", "w")


@st.composite
def polys(draw, max_depth=2):
    def atom():
        choice = draw(st.integers(0, 2))
        if choice == 0:
            return x_var(draw(st.sampled_from(SYMS)))
        if choice == 1:
            return b_var(draw(st.sampled_from(OMEGAS)))
        return one()

    def build(d):
        kind = draw(st.integers(0, 4 if d > 0 else 3))
        if kind == 0:
            return atom()
        if kind == 1:
            return multiply(build(d - 1) if d else atom(), atom())
        if kind == 2:
            return (build(d - 1) if d else atom()) + atom()
        if kind == 3:
            c = draw(st.sampled_from([2.0, -1.0, 0.5, 1 + 2j]))
            return (build(d - 1) if d else atom()).scale(c)
        return apply_lambda(
            draw(st.sampled_from(SYMS)), draw(st.sampled_from(SYMS)), build(d - 1)
        )

    return build(draw(st.integers(0, max_depth)))


@settings(max_examples=60, deadline=None)
@given(polys(), polys())
def test_adjoint_involution_and_antimultiplicativity(f, g):
    assert adjoint(adjoint(f)) == f
    assert adjoint(multiply(f, g)) == multiply(adjoint(g), adjoint(f))


@settings(max_examples=60, deadline=None)
@given(polys())
def test_grammar_round_trip(f):
    assert parse_poly(format_poly(f)) == f


def _eval_data(seed=0, n=4):
    eta, _, _ = random_kraus_covariance(n, f=2, m=2, seed=seed)
    rng = np.random.default_rng(seed + 100)
    b = {s: rand_hermitian(rng, n) for s in OMEGAS}
    x = {s: rand_hermitian(rng, n) for s in SYMS}
    return eta, b, x


@settings(max_examples=50, deadline=None)
@given(polys(max_depth=1), polys(max_depth=1), st.integers(0, 3))
def test_evaluation_homomorphism(f, g, seed):
    eta, b, x = _eval_data(seed)
    lhs = evaluate(multiply(f, g), b=b, x=x, eta=eta)
    rhs = evaluate(f, b=b, x=x, eta=eta) @ evaluate(g, b=b, x=x, eta=eta)
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


@settings(max_examples=50, deadline=None)
@given(polys(max_depth=1), st.integers(0, 3))
def test_evaluation_respects_adjoint(f, seed):
    eta, b, x = _eval_data(seed)
    lhs = evaluate(adjoint(f), b=b, x=x, eta=eta)
    rhs = evaluate(f, b=b, x=x, eta=eta).conj().T
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


def test_evaluate_identity_and_base_case():
    eta, b, x = _eval_data(1)
    n = eta.n
    assert np.array_equal(evaluate(one(), b=b, x=x, eta=eta), np.eye(n))
    lhs = evaluate(apply_lambda("1", "2", b_var("w")), b=b, eta=eta)
    assert np.abs(lhs - eta.apply("1", "2", b["w"])).max() < 1e-12


def test_evaluate_lambda_matches_eta_composition():
    eta, b, x = _eval_data(2)
    f = multiply(x_var("1"), b_var("w"))
    inner = evaluate(f, b=b, x=x, eta=eta)
    lhs = evaluate(apply_lambda("2", "1", f), b=b, x=x, eta=eta)
    assert np.abs(lhs - eta.apply("2", "1", inner)).max() < 1e-12


def test_missing_symbol_raises():
    eta, b, x = _eval_data(3)
    with pytest.raises(covpoly.AlphabetError):
        evaluate(b_var("nope"), b=b, x=x, eta=eta)


# -- reduction order independence ---------------------------------------------


@settings(max_examples=40, deadline=None)
@given(polys(max_depth=2), st.integers(0, 3))
def test_reduction_order_independence(f, seed):
    eta, b, x = _eval_data(seed)
    vals = {}
    for prefer in ("first", "last"):
        total = np.zeros((eta.n, eta.n), dtype=complex)
        for t in f.terms:
            segs = [
                covpoly.evaluate(
                    covpoly.CovPolynomial.from_terms([CovMonomial(1.0, (w,))]),
                    b=b, x=x, eta=eta,
                )
                for w in t.words
            ]
            total += t.coefficient * covpoly.reduce_pairing(
                eta.apply, lambda a, c: a @ c, t.pairing, t.indices, segs,
                prefer=prefer,
            )
        vals[prefer] = total
    scale = max(1.0, np.abs(vals["first"]).max())
    assert np.abs(vals["first"] - vals["last"]).max() <= 1e-12 * scale


# -- grammar details ------------------------------------------------------------


def test_parse_examples():
    f = parse_poly("2.0 x:1 x:1 + L[1,2](b:w*)")
    assert len(f.terms) == 2
    assert parse_poly("1.0") == one()
    assert parse_poly("(1+2j) b:w") == b_var("w").scale(1 + 2j)


def test_format_zero_and_unit():
    assert format_poly(covpoly.CovPolynomial()) == "0.0"
    assert parse_poly(format_poly(one())) == one()
    empty_lam = apply_lambda("1", "1", one())
    assert "L[1,1](1" in format_poly(empty_lam).replace(" ", "")


def test_parse_errors():
    with pytest.raises(PolyParseError):
        parse_poly("L[1,2](x:1")  # unclosed
    with pytest.raises(PolyParseError):
        parse_poly("x:1 @ x:1")
    with pytest.raises(PolyParseError):
        parse_poly("+")


def test_merge_and_prune():
    f = x_var("1") + x_var("1")
    (t,) = f.terms
    assert t.coefficient == 2.0
    assert (f - f.scale(1)).is_zero()
