"""Formal covariance polynomials: noncommutative *-polynomials in base
letters ``b:w`` and semicircular letters ``x:i``, with nested applications of
the covariance maps encoded by a non-crossing pairing and an index tuple.

A monomial is stored flattened as ``coefficient, (w_0, ..., w_2k), pairing,
indices``: the pairing block ``(r, s)`` stands for an application of
``L[i_r, i_s]`` wrapped around everything between positions ``r`` and ``s``.
A nested AST is derivable (see :func:`format_poly`) but never stored.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .partitions import (
    PairPartition,
    PartitionError,
    disjoint_union,
    find_innermost_adjacent,
    is_noncrossing,
    nest,
    nesting_depth,
    nesting_forest,
    remove_block,
)

BASE = "b"
SEMI = "x"


class AlphabetError(KeyError):
    """A symbol required by evaluation is missing from the supplied data."""


@dataclass(frozen=True)
class Letter:
    kind: str  # BASE or SEMI
    symbol: str
    star: bool = False

    def __post_init__(self):
        if self.kind not in (BASE, SEMI):
            raise ValueError(f"unknown letter kind {self.kind!r}")

    def adjoint(self) -> "Letter":
        return Letter(self.kind, self.symbol, not self.star)

    def text(self) -> str:
        return f"{self.kind}:{self.symbol}" + ("*" if self.star else "")


@dataclass(frozen=True)
class Word:
    letters: tuple[Letter, ...] = ()

    def __len__(self) -> int:
        return len(self.letters)

    def __mul__(self, other: "Word") -> "Word":
        return Word(self.letters + other.letters)

    def adjoint(self) -> "Word":
        return Word(tuple(l.adjoint() for l in reversed(self.letters)))

    def text(self) -> str:
        return " ".join(l.text() for l in self.letters)


EMPTY_WORD = Word()


@dataclass(frozen=True)
class CovMonomial:
    """coefficient * w_0 L-structure(w_1, ..., w_{2k-1}) w_{2k}."""

    coefficient: complex
    words: tuple[Word, ...] = (EMPTY_WORD,)
    pairing: PairPartition = PairPartition(0, ())
    indices: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coefficient", complex(self.coefficient))
        if len(self.words) != self.pairing.length + 1:
            raise ValueError("need exactly 2k+1 words for a pairing of length 2k")
        if len(self.indices) != self.pairing.length:
            raise ValueError("need one index per pairing element")
        if not is_noncrossing(self.pairing):
            raise PartitionError("monomial pairings must be non-crossing")

    @property
    def k(self) -> int:
        return self.pairing.k

    def structure_key(self):
        return (self.words, self.pairing, self.indices)

    def with_coefficient(self, c: complex) -> "CovMonomial":
        return CovMonomial(c, self.words, self.pairing, self.indices)

    def scaled(self, c: complex) -> "CovMonomial":
        return self.with_coefficient(self.coefficient * complex(c))

    def depth(self) -> int:
        return nesting_depth(self.pairing)

    def degree(self) -> int:
        return sum(len(w) for w in self.words)


@dataclass(frozen=True)
class CovPolynomial:
    terms: tuple[CovMonomial, ...] = ()

    @classmethod
    def from_terms(cls, terms) -> "CovPolynomial":
        acc: dict = {}
        for t in terms:
            key = t.structure_key()
            if key in acc:
                acc[key] = acc[key].with_coefficient(acc[key].coefficient + t.coefficient)
            else:
                acc[key] = t
        merged = [m for m in acc.values() if m.coefficient != 0]
        merged.sort(key=lambda m: repr(m.structure_key()))
        return cls(tuple(merged))

    # -- algebra ----------------------------------------------------------

    def __add__(self, other: "CovPolynomial") -> "CovPolynomial":
        return CovPolynomial.from_terms(self.terms + other.terms)

    def __sub__(self, other: "CovPolynomial") -> "CovPolynomial":
        return self + other.scale(-1)

    def __mul__(self, other):
        if isinstance(other, CovPolynomial):
            return multiply(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def scale(self, c: complex) -> "CovPolynomial":
        return CovPolynomial.from_terms(t.scaled(c) for t in self.terms)

    def is_zero(self) -> bool:
        return not self.terms


# -- constructors ----------------------------------------------------------

def one() -> CovPolynomial:
    return CovPolynomial.from_terms([CovMonomial(1.0)])


def x_var(i) -> CovPolynomial:
    w = Word((Letter(SEMI, str(i)),))
    return CovPolynomial.from_terms([CovMonomial(1.0, (w,))])


def b_var(omega) -> CovPolynomial:
    w = Word((Letter(BASE, str(omega)),))
    return CovPolynomial.from_terms([CovMonomial(1.0, (w,))])


# -- operations ------------------------------------------------------------

def multiply(f: CovPolynomial, g: CovPolynomial) -> CovPolynomial:
    out = []
    for a in f.terms:
        for b in g.terms:
            words = a.words[:-1] + (a.words[-1] * b.words[0],) + b.words[1:]
            out.append(
                CovMonomial(
                    a.coefficient * b.coefficient,
                    words,
                    disjoint_union(a.pairing, b.pairing),
                    a.indices + b.indices,
                )
            )
    return CovPolynomial.from_terms(out)


def adjoint(f: CovPolynomial) -> CovPolynomial:
    out = []
    for t in f.terms:
        out.append(
            CovMonomial(
                np.conjugate(t.coefficient),
                tuple(w.adjoint() for w in reversed(t.words)),
                t.pairing.reflect(),
                tuple(reversed(t.indices)),
            )
        )
    return CovPolynomial.from_terms(out)


def apply_lambda(i, j, f: CovPolynomial) -> CovPolynomial:
    i, j = str(i), str(j)
    out = []
    for t in f.terms:
        out.append(
            CovMonomial(
                t.coefficient,
                (EMPTY_WORD,) + t.words + (EMPTY_WORD,),
                nest(t.pairing),
                (i,) + t.indices + (j,),
            )
        )
    return CovPolynomial.from_terms(out)


def depth(f: CovPolynomial) -> int:
    return max((t.depth() for t in f.terms), default=0)


def degree(f: CovPolynomial) -> int:
    return max((t.degree() for t in f.terms), default=0)


# -- evaluation ------------------------------------------------------------

def reduce_pairing(apply_fn, mul, pairing: PairPartition, indices, segments, prefer="first"):
    """Innermost-adjacent reduction of a non-crossing pairing value.

    ``segments`` holds the 2k+1 elements sitting around the 2k positions
    (including the two boundary elements).  Collapsing an adjacent block
    (r, r+1) replaces the neighborhood ``s_{r-1}, s_r, s_{r+1}`` by
    ``s_{r-1} * apply(i_r, i_{r+1}, s_r) * s_{r+1}``.  The result is
    independent of which adjacent block is collapsed first; ``prefer``
    exposes the tie-break for the order-independence tests.
    """
    if len(segments) != pairing.length + 1:
        raise PartitionError(
            f"need {pairing.length + 1} segments, got {len(segments)}"
        )
    segments = list(segments)
    while pairing.length > 0:
        r, s = find_innermost_adjacent(pairing, prefer=prefer)
        val = apply_fn(indices[r - 1], indices[s - 1], segments[r])
        merged = mul(mul(segments[r - 1], val), segments[r + 1])
        segments = segments[: r - 1] + [merged] + segments[r + 2 :]
        pairing = remove_block(pairing, (r, s))
        indices = tuple(indices[: r - 1]) + tuple(indices[s:])
    return segments[0]


def _lookup(tup, symbol: str):
    if tup is None:
        raise AlphabetError(f"no data supplied for symbol {symbol!r}")
    try:
        return tup[symbol]
    except (KeyError, IndexError):
        pass
    # tolerate integer-labeled tuples addressed by their string form
    try:
        return tup[int(symbol)]
    except (KeyError, IndexError, ValueError, TypeError):
        raise AlphabetError(f"symbol {symbol!r} not covered by supplied data") from None


def evaluate(f: CovPolynomial, b=None, x=None, eta=None):
    """Evaluate a covariance polynomial to a concrete n x n matrix.

    ``b`` and ``x`` map symbols to Hermitian matrices (any mapping or
    HermitianTuple); ``eta`` supplies the covariance maps for the nested
    L-applications.  Inner arguments are evaluated bottom-up via the
    innermost-adjacent reduction.
    """
    n = None
    for tup in (b, x):
        if tup is not None:
            for m in _itermatrices(tup):
                n = np.asarray(m).shape[0]
                break
        if n is not None:
            break
    if n is None and eta is not None:
        n = eta.n
    if n is None:
        raise ValueError("cannot infer the matrix dimension from the inputs")

    eye = np.eye(n, dtype=complex)

    def word_value(w: Word):
        out = eye
        for letter in w.letters:
            m = _lookup(b if letter.kind == BASE else x, letter.symbol)
            m = np.asarray(m, dtype=complex)
            if m.shape != (n, n):
                raise ValueError(
                    f"matrix for {letter.text()} has shape {m.shape}, expected {(n, n)}"
                )
            if letter.star:
                m = m.conj().T
            out = out @ m
        return out

    def apply_fn(i, j, a):
        if eta is None:
            raise AlphabetError("polynomial has L-applications but no covariance given")
        return eta.apply(i, j, a)

    total = np.zeros((n, n), dtype=complex)
    for t in f.terms:
        segs = [word_value(w) for w in t.words]
        val = reduce_pairing(apply_fn, lambda a, c: a @ c, t.pairing, t.indices, segs)
        total += t.coefficient * val
    return total


def _itermatrices(tup):
    if hasattr(tup, "matrices"):
        yield from tup.matrices
        return
    if hasattr(tup, "values"):
        yield from tup.values()
        return
    yield from tup


# -- text grammar ----------------------------------------------------------
#
#   poly   := term ('+' term)*
#   term   := scalar? factor*           (at least one of the two)
#   factor := primary '*'*              ('*' suffix = adjoint)
#   primary:= 'b:SYM' | 'x:SYM' | 'L[SYM,SYM](' poly ')'
#   scalar := bare nonnegative float | parenthesized complex, e.g. (-1+0j)

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<lam>L\[(?P<li>[A-Za-z0-9_.-]+),(?P<lj>[A-Za-z0-9_.-]+)\]\()
      | (?P<letter>[bx]:[A-Za-z0-9_.-]+)
      | (?P<cnum>\([0-9eEj+\-.]+\))
      | (?P<num>[0-9]+(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?)
      | (?P<star>\*)
      | (?P<plus>\+)
      | (?P<close>\))
    )""",
    re.VERBOSE,
)


class PolyParseError(ValueError):
    pass


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == m.start():
            raise PolyParseError(
                f"cannot tokenize at position {pos}: {text[pos:pos + 20]!r}"
            )
        pos = m.end()
        if m.group("lam"):
            out.append(("lam", (m.group("li"), m.group("lj"))))
        elif m.group("letter"):
            out.append(("letter", m.group("letter")))
        elif m.group("cnum"):
            try:
                out.append(("scalar", complex(m.group("cnum"))))
            except ValueError as exc:
                raise PolyParseError(f"bad scalar {m.group('cnum')!r}") from exc
        elif m.group("num"):
            out.append(("scalar", float(m.group("num"))))
        elif m.group("star"):
            out.append(("star", "*"))
        elif m.group("plus"):
            out.append(("plus", "+"))
        elif m.group("close"):
            out.append(("close", ")"))
    return out


class _TokenStream:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok


def parse_poly(text: str) -> CovPolynomial:
    ts = _TokenStream(_tokenize(text))
    poly = _parse_sum(ts)
    kind, _ = ts.peek()
    if kind is not None:
        raise PolyParseError(f"unexpected trailing token {ts.peek()!r}")
    return poly


def _parse_sum(ts: _TokenStream) -> CovPolynomial:
    poly = _parse_term(ts)
    while ts.peek()[0] == "plus":
        ts.next()
        poly = poly + _parse_term(ts)
    return poly


def _parse_term(ts: _TokenStream) -> CovPolynomial:
    coeff = None
    if ts.peek()[0] == "scalar":
        coeff = ts.next()[1]
    factors = []
    while ts.peek()[0] in ("letter", "lam"):
        factors.append(_parse_factor(ts))
    if coeff is None and not factors:
        raise PolyParseError(f"expected a term, found {ts.peek()!r}")
    poly = one()
    for fac in factors:
        poly = multiply(poly, fac)
    if coeff is not None:
        poly = poly.scale(coeff)
    return poly


def _parse_factor(ts: _TokenStream) -> CovPolynomial:
    kind, val = ts.next()
    if kind == "letter":
        tag, sym = val.split(":", 1)
        poly = b_var(sym) if tag == BASE else x_var(sym)
    elif kind == "lam":
        i, j = val
        inner = _parse_sum(ts)
        if ts.next()[0] != "close":
            raise PolyParseError("missing ')' closing an L-application")
        poly = apply_lambda(i, j, inner)
    else:
        raise PolyParseError(f"unexpected token {(kind, val)!r}")
    while ts.peek()[0] == "star":
        ts.next()
        poly = adjoint(poly)
    return poly


def _format_scalar(c: complex) -> str:
    c = complex(c)
    if c.imag == 0 and c.real >= 0:
        return repr(c.real)
    s = repr(c)
    if not s.startswith("("):
        s = f"({s})"
    return s


def _render_span(words, indices, nodes, lo):
    pieces = [words[lo].text()]
    for (r, s), children in nodes:
        inner = _render_span(words, indices, children, r)
        pieces.append(f"L[{indices[r - 1]},{indices[s - 1]}]({inner if inner else '1'})")
        pieces.append(words[s].text())
    return " ".join(p for p in pieces if p)


def format_poly(f: CovPolynomial) -> str:
    """Canonical text form; ``parse_poly(format_poly(f)) == f`` exactly."""
    if not f.terms:
        return "0.0"
    parts = []
    for t in f.terms:
        body = _render_span(t.words, t.indices, nesting_forest(t.pairing), 0)
        if t.coefficient == 1 and body:
            parts.append(body)
        elif body:
            parts.append(f"{_format_scalar(t.coefficient)} {body}")
        else:
            parts.append(_format_scalar(t.coefficient))
    return " + ".join(parts)
