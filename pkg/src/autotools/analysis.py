"""Static analysis of generated source in the agent scripting language.

The built-in analyzer compiles a source fragment to a syntax tree, extracts
the primary function signature (the last top-level definition), and resolves
every referenced name against parameters, locals, imports, and builtins.
Names defined nowhere are the "non-self-contained" hallucinations the
encapsulation check must reject.
"""

from __future__ import annotations

import ast
import builtins
from dataclasses import dataclass

_BUILTIN_NAMES = frozenset(vars(builtins)) | {"__name__", "__file__", "__doc__"}

# Normalization of annotation spellings to canonical scripting-language types.
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


@dataclass(frozen=True)
class ParamInfo:
    """One declared parameter of the primary function."""

    name: str
    annotation: str | None  # canonical type name, None when absent/opaque
    has_default: bool
    default_repr: str | None = None

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "annotation": self.annotation,
            "has_default": self.has_default,
            "default": self.default_repr,
        }

    @classmethod
    def from_wire(cls, raw: dict) -> "ParamInfo":
        return cls(
            name=raw["name"],
            annotation=raw.get("annotation"),
            has_default=bool(raw.get("has_default")),
            default_repr=raw.get("default"),
        )


@dataclass(frozen=True)
class SourceAnalysis:
    """Result of analyzing one source fragment."""

    parse_ok: bool
    parse_error: str | None = None
    functions: tuple[str, ...] = ()
    params: tuple[ParamInfo, ...] = ()  # parameters of the primary function
    returns: str | None = None  # canonical return annotation of the primary function
    unresolved: tuple[str, ...] = ()

    @property
    def primary_function(self) -> str | None:
        return self.functions[-1] if self.functions else None

    def to_wire(self) -> dict:
        return {
            "parse_ok": self.parse_ok,
            "error": self.parse_error,
            "functions": list(self.functions),
            "params": [p.to_wire() for p in self.params],
            "returns": self.returns,
            "unresolved": list(self.unresolved),
        }

    @classmethod
    def from_wire(cls, raw: dict) -> "SourceAnalysis":
        return cls(
            parse_ok=bool(raw.get("parse_ok")),
            parse_error=raw.get("error"),
            functions=tuple(raw.get("functions") or ()),
            params=tuple(ParamInfo.from_wire(p) for p in raw.get("params") or ()),
            returns=raw.get("returns"),
            unresolved=tuple(raw.get("unresolved") or ()),
        )


def canonical_type(node: ast.expr | None) -> str | None:
    """Reduce an annotation node to a canonical type name, or None if opaque.

    Optional wrappers (`X | None`, `Optional[X]`) reduce to X; parameterized
    containers reduce to their base.
    """
    if node is None:
        return None
    if isinstance(node, ast.Constant):
        if isinstance(node.value, str):
            try:
                return canonical_type(ast.parse(node.value, mode="eval").body)
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
            return canonical_type(node.slice)
        if base_name == "Union":
            return _first_non_none(node.slice)
        return canonical_type(base)
    if isinstance(node, ast.BinOp) and isinstance(node.op, ast.BitOr):
        left = canonical_type(node.left)
        if left is not None and not _is_none(node.left):
            return left
        return canonical_type(node.right)
    return None


def _is_none(node: ast.expr) -> bool:
    return isinstance(node, ast.Constant) and node.value is None


def _first_non_none(node: ast.expr) -> str | None:
    elts = node.elts if isinstance(node, ast.Tuple) else [node]
    for e in elts:
        if not _is_none(e):
            return canonical_type(e)
    return None


class _Binder(ast.NodeVisitor):
    """Collects every name the fragment binds anywhere."""

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


def _param_infos(fn: ast.FunctionDef | ast.AsyncFunctionDef) -> tuple[ParamInfo, ...]:
    args = fn.args
    positional = [*args.posonlyargs, *args.args]
    n_defaults = len(args.defaults)
    infos: list[ParamInfo] = []
    for i, a in enumerate(positional):
        has_default = i >= len(positional) - n_defaults
        default_node = (
            args.defaults[i - (len(positional) - n_defaults)] if has_default else None
        )
        infos.append(
            ParamInfo(
                name=a.arg,
                annotation=canonical_type(a.annotation),
                has_default=has_default,
                default_repr=ast.unparse(default_node) if default_node is not None else None,
            )
        )
    for a, d in zip(args.kwonlyargs, args.kw_defaults):
        infos.append(
            ParamInfo(
                name=a.arg,
                annotation=canonical_type(a.annotation),
                has_default=d is not None,
                default_repr=ast.unparse(d) if d is not None else None,
            )
        )
    return tuple(infos)


def analyze_source(source: str, extra_allowed: frozenset[str] | set[str] = frozenset()) -> SourceAnalysis:
    """Analyze a source fragment.

    `extra_allowed` names count as defined (e.g. library functions preloaded
    in the execution environment).
    """
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        return SourceAnalysis(parse_ok=False, parse_error=f"{exc.msg} (line {exc.lineno})")

    binder = _Binder()
    binder.visit(tree)
    allowed = binder.bound | _BUILTIN_NAMES | set(extra_allowed)

    unresolved: list[str] = []
    seen: set[str] = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and isinstance(node.ctx, ast.Load):
            if node.id not in allowed and node.id not in seen:
                unresolved.append(node.id)
                seen.add(node.id)

    fns = [
        n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))
    ]
    params: tuple[ParamInfo, ...] = ()
    returns: str | None = None
    if fns:
        primary = fns[-1]
        params = _param_infos(primary)
        returns = canonical_type(primary.returns)

    return SourceAnalysis(
        parse_ok=True,
        functions=tuple(f.name for f in fns),
        params=params,
        returns=returns,
        unresolved=tuple(unresolved),
    )


def called_names(source: str) -> list[str]:
    """Names of plain function calls in the fragment, in call order."""
    try:
        tree = ast.parse(source)
    except SyntaxError:
        return []
    out: list[str] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            out.append(node.func.id)
    return out
