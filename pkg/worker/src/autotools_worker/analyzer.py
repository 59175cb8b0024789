"""Source analysis for the `check` protocol op.

Parses a fragment, extracts the primary function signature (the last
top-level definition), and resolves every referenced name against
parameters, locals, imports, and builtins. The wire shape must match the
bridge's expectation exactly:

    {"parse_ok": bool, "error": str|null, "functions": [...],
     "params": [{"name", "annotation", "has_default", "default"}],
     "returns": str|null, "unresolved": [...]}
"""

from __future__ import annotations

import ast
import builtins

_BUILTIN_NAMES = frozenset(vars(builtins)) | {"__name__", "__file__", "__doc__"}

_TYPE_ALIASES = {
    "str": "str",
    "Text": "str",
    "int": "int",
    "float": "float",
    "bool": "bool",
    "list": "list",
    "List": "list",
    "Sequence": "list",
    "tuple": "tuple",
    "Tuple": "tuple",
    "dict": "dict",
    "Dict": "dict",
    "Mapping": "dict",
    "set": "set",
    "Set": "set",
}


def _canonical_type(node: ast.expr | None) -> str | None:
    if node is None:
        return None
    if isinstance(node, ast.Constant):
        if isinstance(node.value, str):
            try:
                return _canonical_type(ast.parse(node.value, mode="eval").body)
            except SyntaxError:
                return None
        return None
    if isinstance(node, ast.Name):
        return _TYPE_ALIASES.get(node.id)
    if isinstance(node, ast.Attribute):
        return _TYPE_ALIASES.get(node.attr)
    if isinstance(node, ast.Subscript):
        base = node.value
        base_name = None
        if isinstance(base, ast.Name):
            base_name = base.id
        elif isinstance(base, ast.Attribute):
            base_name = base.attr
        if base_name == "Optional":
            return _canonical_type(node.slice)
        if base_name == "Union":
            return _first_non_none(node.slice)
        return _canonical_type(base)
    if isinstance(node, ast.BinOp) and isinstance(node.op, ast.BitOr):
        left = _canonical_type(node.left)
        if left is not None and not _is_none(node.left):
            return left
        return _canonical_type(node.right)
    return None


def _is_none(node: ast.expr) -> bool:
    return isinstance(node, ast.Constant) and node.value is None


def _first_non_none(node: ast.expr) -> str | None:
    elts = node.elts if isinstance(node, ast.Tuple) else [node]
    for e in elts:
        if not _is_none(e):
            return _canonical_type(e)
    return None


class _Binder(ast.NodeVisitor):
    def __init__(self) -> None:
        self.bound: set[str] = set()

    def _bind_target(self, node: ast.expr) -> None:
        if isinstance(node, ast.Name):
            self.bound.add(node.id)
        elif isinstance(node, (ast.Tuple, ast.List)):
            for elt in node.elts:
                self._bind_target(elt)
        elif isinstance(node, ast.Starred):
            self._bind_target(node.value)

    def _bind_args(self, args: ast.arguments) -> None:
        for a in [*args.posonlyargs, *args.args, *args.kwonlyargs]:
            self.bound.add(a.arg)
        if args.vararg:
            self.bound.add(args.vararg.arg)
        if args.kwarg:
            self.bound.add(args.kwarg.arg)

    def visit_FunctionDef(self, node: ast.FunctionDef) -> None:
        self.bound.add(node.name)
        self._bind_args(node.args)
        self.generic_visit(node)

    def visit_AsyncFunctionDef(self, node: ast.AsyncFunctionDef) -> None:
        self.bound.add(node.name)
        self._bind_args(node.args)
        self.generic_visit(node)

    def visit_Lambda(self, node: ast.Lambda) -> None:
        self._bind_args(node.args)
        self.generic_visit(node)

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        self.bound.add(node.name)
        self.generic_visit(node)

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            self.bound.add(alias.asname or alias.name.split(".")[0])

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        for alias in node.names:
            if alias.name != "*":
                self.bound.add(alias.asname or alias.name)

    def visit_Assign(self, node: ast.Assign) -> None:
        for t in node.targets:
            self._bind_target(t)
        self.generic_visit(node)

    def visit_AnnAssign(self, node: ast.AnnAssign) -> None:
        self._bind_target(node.target)
        self.generic_visit(node)

    def visit_AugAssign(self, node: ast.AugAssign) -> None:
        self._bind_target(node.target)
        self.generic_visit(node)

    def visit_NamedExpr(self, node: ast.NamedExpr) -> None:
        self._bind_target(node.target)
        self.generic_visit(node)

    def visit_For(self, node: ast.For) -> None:
        self._bind_target(node.target)
        self.generic_visit(node)

    def visit_AsyncFor(self, node: ast.AsyncFor) -> None:
        self._bind_target(node.target)
        self.generic_visit(node)

    def visit_withitem(self, node: ast.withitem) -> None:
        if node.optional_vars is not None:
            self._bind_target(node.optional_vars)
        self.generic_visit(node)

    def visit_comprehension(self, node: ast.comprehension) -> None:
        self._bind_target(node.target)
        self.generic_visit(node)

    def visit_ExceptHandler(self, node: ast.ExceptHandler) -> None:
        if node.name:
            self.bound.add(node.name)
        self.generic_visit(node)

    def visit_Global(self, node: ast.Global) -> None:
        self.bound.update(node.names)

    def visit_Nonlocal(self, node: ast.Nonlocal) -> None:
        self.bound.update(node.names)


def _param_wire(fn: ast.FunctionDef | ast.AsyncFunctionDef) -> list[dict]:
    args = fn.args
    positional = [*args.posonlyargs, *args.args]
    n_defaults = len(args.defaults)
    out: list[dict] = []
    for i, a in enumerate(positional):
        has_default = i >= len(positional) - n_defaults
        default_node = (
            args.defaults[i - (len(positional) - n_defaults)] if has_default else None
        )
        out.append(
            {
                "name": a.arg,
                "annotation": _canonical_type(a.annotation),
                "has_default": has_default,
                "default": ast.unparse(default_node) if default_node is not None else None,
            }
        )
    for a, d in zip(args.kwonlyargs, args.kw_defaults):
        out.append(
            {
                "name": a.arg,
                "annotation": _canonical_type(a.annotation),
                "has_default": d is not None,
                "default": ast.unparse(d) if d is not None else None,
            }
        )
    return out


def analyze(source: str) -> dict:
    """Analysis result in the protocol wire shape."""
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        return {
            "parse_ok": False,
            "error": f"{exc.msg} (line {exc.lineno})",
            "functions": [],
            "params": [],
            "returns": None,
            "unresolved": [],
        }

    binder = _Binder()
    binder.visit(tree)
    allowed = binder.bound | _BUILTIN_NAMES

    unresolved: list[str] = []
    seen: set[str] = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and isinstance(node.ctx, ast.Load):
            if node.id not in allowed and node.id not in seen:
                unresolved.append(node.id)
                seen.add(node.id)

    fns = [n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    params: list[dict] = []
    returns = None
    if fns:
        params = _param_wire(fns[-1])
        returns = _canonical_type(fns[-1].returns)

    return {
        "parse_ok": True,
        "error": None,
        "functions": [f.name for f in fns],
        "params": params,
        "returns": returns,
        "unresolved": unresolved,
    }
