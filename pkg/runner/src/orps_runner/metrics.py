"""Static source metrics computed from the parsed syntax tree.

Counting rules (fixed so fixture tests can assert exact values):

* code_length_lines: total source lines.
* ast_node_count: every node reachable by ast.walk.
* cyclomatic: 1 + the number of branch points anywhere in the module, where
  a branch point is a conditional statement or expression, a loop header, an
  exception handler, a boolean operator (n-ary operators count n-1), a
  comprehension filter, or an assertion.
* cognitive: each control-flow structure (if/elif, ternary, loop, exception
  handler) adds 1 plus its current nesting depth; nesting grows inside those
  structures and inside nested function or lambda bodies; each outermost
  sequence of mixed boolean operators adds 1. ``elif`` continues its chain at
  the parent depth.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass


class SourceParseError(ValueError):
    """Raised when the guest source does not parse."""


@dataclass(frozen=True)
class StaticMetrics:
    code_length_lines: int
    ast_node_count: int
    cyclomatic: int
    cognitive: int

    def to_dict(self) -> dict[str, int]:
        return {
            "code_length_lines": self.code_length_lines,
            "ast_node_count": self.ast_node_count,
            "cyclomatic": self.cyclomatic,
            "cognitive": self.cognitive,
        }


_LOOP_NODES = (ast.For, ast.AsyncFor, ast.While)


def _cyclomatic(tree: ast.AST) -> int:
    branches = 0
    for node in ast.walk(tree):
        if isinstance(node, (ast.If, ast.IfExp)) or isinstance(node, _LOOP_NODES):
            branches += 1
        elif isinstance(node, ast.ExceptHandler):
            branches += 1
        elif isinstance(node, ast.BoolOp):
            branches += len(node.values) - 1
        elif isinstance(node, ast.comprehension):
            branches += len(node.ifs)
        elif isinstance(node, ast.Assert):
            branches += 1
    return 1 + branches


def _boolean_mixed_sequences(tree: ast.AST) -> int:
    """Count outermost boolean-operator clusters mixing ``and`` and ``or``."""

    def cluster_ops(node: ast.BoolOp, ops: set) -> None:
        ops.add(type(node.op))
        for value in node.values:
            if isinstance(value, ast.BoolOp):
                cluster_ops(value, ops)

    count = 0
    stack = [(tree, False)]
    while stack:
        node, inside_bool = stack.pop()
        if isinstance(node, ast.BoolOp) and not inside_bool:
            ops: set = set()
            cluster_ops(node, ops)
            if len(ops) > 1:
                count += 1
            for child in ast.iter_child_nodes(node):
                stack.append((child, True))
            continue
        child_inside = inside_bool and isinstance(node, ast.BoolOp)
        for child in ast.iter_child_nodes(node):
            stack.append((child, child_inside))
    return count


class _CognitiveVisitor:
    def __init__(self):
        self.total = 0

    def visit_body(self, statements, depth: int) -> None:
        for statement in statements:
            self.visit(statement, depth)

    def _structure(self, node, depth: int, *bodies) -> None:
        self.total += 1 + depth
        for body in bodies:
            self.visit_body(body, depth + 1)

    def visit(self, node: ast.AST, depth: int) -> None:
        if isinstance(node, ast.If):
            self.total += 1 + depth
            self.visit_body(node.body, depth + 1)
            self._visit_orelse(node.orelse, depth)
            self.visit(node.test, depth)
        elif isinstance(node, _LOOP_NODES):
            self._structure(node, depth, node.body, node.orelse)
            for child in ast.iter_child_nodes(node):
                if child not in node.body and child not in node.orelse:
                    self.visit(child, depth)
        elif isinstance(node, ast.Try):
            self.visit_body(node.body, depth)
            for handler in node.handlers:
                self.total += 1 + depth
                self.visit_body(handler.body, depth + 1)
            self.visit_body(node.orelse, depth)
            self.visit_body(node.finalbody, depth)
        elif isinstance(node, ast.IfExp):
            self.total += 1 + depth
            for child in ast.iter_child_nodes(node):
                self.visit(child, depth + 1)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            # A top-level or class-level function body starts at depth 0;
            # functions nested inside other code add a nesting level.
            inner = depth + 1 if depth or self._nested else depth
            was_nested = self._nested
            self._nested = True
            self.visit_body(node.body, inner)
            self._nested = was_nested
        elif isinstance(node, ast.Lambda):
            self.visit(node.body, depth + 1)
        elif isinstance(node, ast.ClassDef):
            self.visit_body(node.body, depth)
        else:
            for child in ast.iter_child_nodes(node):
                self.visit(child, depth)

    def _visit_orelse(self, orelse, depth: int) -> None:
        if len(orelse) == 1 and isinstance(orelse[0], ast.If):
            # elif: continues the chain at the same depth
            self.visit(orelse[0], depth)
        else:
            self.visit_body(orelse, depth + 1)

    _nested = False


def _cognitive(tree: ast.Module) -> int:
    visitor = _CognitiveVisitor()
    visitor.visit_body(tree.body, 0)
    return visitor.total + _boolean_mixed_sequences(tree)


def compute_static_metrics(code: str) -> StaticMetrics:
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError) as exc:
        raise SourceParseError(f"{type(exc).__name__}: {exc}") from exc
    return StaticMetrics(
        code_length_lines=len(code.splitlines()),
        ast_node_count=sum(1 for _ in ast.walk(tree)),
        cyclomatic=_cyclomatic(tree),
        cognitive=_cognitive(tree),
    )
