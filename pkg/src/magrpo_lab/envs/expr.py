"""Integer expressions over literals, ``+``, ``*`` and the symbol ``AUX``.

Grammar (``*`` binds tighter than ``+``)::

    expr   := term ('+' term)*
    term   := factor ('*' factor)*
    factor := INT | 'AUX'
"""
from __future__ import annotations

import re
from dataclasses import dataclass

_TOKEN = re.compile(r"\s*(?:(\d+)|(AUX)|([+*]))")


class EvaluationError(Exception):
    pass


class ParseError(EvaluationError):
    pass


class UnresolvedSymbolError(EvaluationError):
    """``AUX`` was referenced but no auxiliary value is available."""


@dataclass(frozen=True)
class Expr:
    # Sum of products; each factor is an int literal or None for AUX.
    terms: tuple[tuple[int | None, ...], ...]

    @property
    def references_aux(self) -> bool:
        return any(f is None for term in self.terms for f in term)

    def evaluate(self, aux_value: int | None = None) -> int:
        if self.references_aux and aux_value is None:
            raise UnresolvedSymbolError("AUX referenced without an auxiliary value")
        total = 0
        for term in self.terms:
            prod = 1
            for f in term:
                prod *= aux_value if f is None else f
            total += prod
        return total


def tokenize(text: str) -> list[str]:
    tokens, pos = [], 0
    stripped = text.rstrip()
    while pos < len(stripped):
        m = _TOKEN.match(stripped, pos)
        if m is None:
            raise ParseError(f"unexpected character {stripped[pos:].lstrip()[:1]!r} at {pos}")
        tokens.append(m.group(m.lastindex))
        pos = m.end()
    return tokens


def parse(text: str) -> Expr:
    tokens = tokenize(text)
    if not tokens:
        raise ParseError("empty expression")
    terms: list[tuple[int | None, ...]] = []
    factors: list[int | None] = []
    expect_factor = True
    for tok in tokens:
        if expect_factor:
            if tok == "AUX":
                factors.append(None)
            elif tok.isdigit():
                factors.append(int(tok))
            else:
                raise ParseError(f"operator {tok!r} where an operand was expected")
            expect_factor = False
        else:
            if tok == "+":
                terms.append(tuple(factors))
                factors = []
            elif tok != "*":
                raise ParseError(f"operand {tok!r} where an operator was expected")
            expect_factor = True
    if expect_factor:
        raise ParseError("expression ends with an operator")
    terms.append(tuple(factors))
    return Expr(tuple(terms))


def evaluate_expression(text: str, aux_value: int | None = None) -> int:
    """Parse and evaluate ``text``.

    Raises ``ParseError`` for malformed input and ``UnresolvedSymbolError``
    when ``AUX`` appears but ``aux_value`` is None.
    """
    return parse(text).evaluate(aux_value)
