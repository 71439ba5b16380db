"""Access policy trees: AND/OR/THRESHOLD gates over attribute-equality leaves.

Text form is a parenthesized prefix grammar:

    policy := and(policy, policy, ...)
            | or(policy, policy, ...)
            | th(k, policy, policy, ...)
            | attribute

Attributes are exact-match tokens, conventionally "Key=Value". Whitespace
between tokens is ignored; attribute tokens may not contain parentheses,
commas, or whitespace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Set

from .errors import InvalidPolicy

KIND_AND = "and"
KIND_OR = "or"
KIND_TH = "th"
KIND_ATTR = "attr"

_GATES = (KIND_AND, KIND_OR, KIND_TH)


@dataclass(frozen=True)
class PolicyNode:
    kind: str
    children: tuple["PolicyNode", ...] = ()
    k: int = 0  # threshold; meaningful for gates
    attribute: str = ""

    def __post_init__(self) -> None:
        if self.kind == KIND_ATTR:
            if not self.attribute:
                raise InvalidPolicy("attribute leaf must be a non-empty string")
            if self.children:
                raise InvalidPolicy("attribute leaf cannot have children")
        elif self.kind in _GATES:
            if not self.children:
                raise InvalidPolicy(f"{self.kind} gate needs at least one child")
            if not 1 <= self.k <= len(self.children):
                raise InvalidPolicy(
                    f"threshold {self.k} outside [1, {len(self.children)}]"
                )
        else:
            raise InvalidPolicy(f"unknown policy node kind {self.kind!r}")

    # -- queries ---------------------------------------------------------------

    def leaves(self) -> Iterator["PolicyNode"]:
        """Leaves in deterministic depth-first order (ciphertexts rely on it)."""
        if self.kind == KIND_ATTR:
            yield self
        else:
            for child in self.children:
                yield from child.leaves()

    def attributes(self) -> Set[str]:
        return {leaf.attribute for leaf in self.leaves()}

    def satisfies(self, attrs: Set[str]) -> bool:
        if self.kind == KIND_ATTR:
            return self.attribute in attrs
        return sum(1 for c in self.children if c.satisfies(attrs)) >= self.k

    def to_text(self) -> str:
        if self.kind == KIND_ATTR:
            return self.attribute
        inner = ",".join(c.to_text() for c in self.children)
        if self.kind == KIND_TH:
            return f"th({self.k},{inner})"
        return f"{self.kind}({inner})"

    def __str__(self) -> str:
        return self.to_text()


def attr(attribute: str) -> PolicyNode:
    return PolicyNode(KIND_ATTR, attribute=attribute)


def and_(*children: PolicyNode) -> PolicyNode:
    return PolicyNode(KIND_AND, tuple(children), k=len(children))


def or_(*children: PolicyNode) -> PolicyNode:
    return PolicyNode(KIND_OR, tuple(children), k=1)


def threshold(k: int, *children: PolicyNode) -> PolicyNode:
    return PolicyNode(KIND_TH, tuple(children), k=k)


# -- parsing ------------------------------------------------------------------

_SPECIALS = "(),"


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def parse(self) -> PolicyNode:
        node = self._node()
        self._skip_ws()
        if self.pos != len(self.text):
            raise InvalidPolicy(
                f"trailing input at offset {self.pos}: {self.text[self.pos:]!r}"
            )
        return node

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _token(self) -> str:
        self._skip_ws()
        start = self.pos
        while (
            self.pos < len(self.text)
            and not self.text[self.pos].isspace()
            and self.text[self.pos] not in _SPECIALS
        ):
            self.pos += 1
        if start == self.pos:
            raise InvalidPolicy(f"expected a token at offset {start}")
        return self.text[start : self.pos]

    def _expect(self, ch: str) -> None:
        self._skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            raise InvalidPolicy(f"expected {ch!r} at offset {self.pos}")
        self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _node(self) -> PolicyNode:
        tok = self._token()
        if self._peek() != "(":
            return attr(tok)
        if tok not in _GATES:
            raise InvalidPolicy(f"unknown gate {tok!r}")
        self._expect("(")
        k = 0
        if tok == KIND_TH:
            num = self._token()
            if not num.isdigit():
                raise InvalidPolicy(f"th() needs a numeric threshold, got {num!r}")
            k = int(num)
            self._expect(",")
        children = [self._node()]
        while self._peek() == ",":
            self._expect(",")
            children.append(self._node())
        self._expect(")")
        if tok == KIND_AND:
            return and_(*children)
        if tok == KIND_OR:
            return or_(*children)
        return threshold(k, *children)


def parse_policy(text: str) -> PolicyNode:
    """Parse the prefix grammar; raises InvalidPolicy on malformed input."""
    if not text or not text.strip():
        raise InvalidPolicy("empty policy text")
    return _Parser(text).parse()


def parse_policy_file(text: str) -> dict[str, PolicyNode]:
    """Parse a task policy file: one `task := <policy>` per line.

    Blank lines and lines starting with '#' are ignored.
    """
    policies: dict[str, PolicyNode] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":=" not in line:
            raise InvalidPolicy(f"line {lineno}: expected 'task := <policy>'")
        task, _, expr = line.partition(":=")
        task = task.strip()
        if not task:
            raise InvalidPolicy(f"line {lineno}: empty task name")
        if task in policies:
            raise InvalidPolicy(f"line {lineno}: duplicate policy for task {task!r}")
        policies[task] = parse_policy(expr)
    return policies
