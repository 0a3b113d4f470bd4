"""Turn generated Python source into function units and back.

Candidate programs arrive as plain Python modules. Each top-level function
becomes one unit; module-level imports and constant assignments are hoisted
into every unit body so that a unit's source is self-contained. Depends-on
edges are derived from name references between units.
"""

from __future__ import annotations

import ast
import builtins
import re

from .model import CodeSolution, FunctionUnit, UnitSignature

FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*\r?\n(.*?)```", re.DOTALL)
BUILTIN_NAMES = frozenset(dir(builtins))


class SourceParseError(Exception):
    """Generated source cannot be mapped onto function units."""


def extract_code_block(text: str) -> str:
    """Return the first fenced code block, or the whole text when none exists."""
    match = FENCE_RE.search(text)
    return match.group(1) if match else text


def _hoistable(node: ast.stmt) -> bool:
    if isinstance(node, (ast.Import, ast.ImportFrom)):
        return True
    if isinstance(node, ast.Assign) and len(node.targets) == 1:
        target = node.targets[0]
        return isinstance(target, ast.Name) and _is_constant_expr(node.value)
    return False


def _is_constant_expr(node: ast.expr) -> bool:
    if isinstance(node, ast.Constant):
        return True
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _is_constant_expr(node.operand)
    if isinstance(node, (ast.Tuple, ast.List)):
        return all(_is_constant_expr(e) for e in node.elts)
    return False


def _bound_names(stmt: ast.stmt) -> set[str]:
    names: set[str] = set()
    if isinstance(stmt, ast.Import):
        for alias in stmt.names:
            names.add(alias.asname or alias.name.split(".")[0])
    elif isinstance(stmt, ast.ImportFrom):
        for alias in stmt.names:
            names.add(alias.asname or alias.name)
    elif isinstance(stmt, ast.Assign):
        target = stmt.targets[0]
        if isinstance(target, ast.Name):
            names.add(target.id)
    return names


def _unit_signature(func: ast.FunctionDef) -> UnitSignature:
    params = []
    args = func.args
    for arg in list(args.posonlyargs) + list(args.args) + list(args.kwonlyargs):
        annotation = ast.unparse(arg.annotation) if arg.annotation is not None else "any"
        params.append((arg.arg, annotation))
    if args.vararg is not None:
        params.append(("*" + args.vararg.arg, "any"))
    if args.kwarg is not None:
        params.append(("**" + args.kwarg.arg, "any"))
    returns = ast.unparse(func.returns) if func.returns is not None else "any"
    return UnitSignature(tuple(params), returns)


def _names_used(node: ast.AST) -> set[str]:
    return {n.id for n in ast.walk(node) if isinstance(n, ast.Name)}


def solution_from_source(source: str, entrypoint: str) -> CodeSolution:
    """Parse a Python module into a CodeSolution with the given entry point.

    Raises SourceParseError on syntax errors, non-function top-level
    statements (other than hoistable imports/constants and docstrings), a
    missing entry point, or duplicate function names. Raises CycleError via
    CodeSolution when derived dependencies are cyclic.
    """
    try:
        module = ast.parse(source)
    except SyntaxError as exc:
        raise SourceParseError(f"syntax error: {exc}") from exc

    prelude: list[ast.stmt] = []
    functions: list[ast.FunctionDef] = []
    for node in module.body:
        if isinstance(node, ast.FunctionDef):
            functions.append(node)
        elif _hoistable(node):
            prelude.append(node)
        elif isinstance(node, ast.Expr) and isinstance(node.value, ast.Constant):
            continue  # module docstring / stray literal
        else:
            raise SourceParseError(
                f"unsupported top-level statement at line {node.lineno}: "
                f"{type(node).__name__}"
            )
    if not functions:
        raise SourceParseError("no top-level function definitions found")

    names = [f.name for f in functions]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise SourceParseError(f"duplicate function names: {', '.join(dupes)}")
    if entrypoint not in names:
        raise SourceParseError(f"entry point {entrypoint!r} is not defined")

    units: dict[str, FunctionUnit] = {}
    deps: set[tuple[str, str]] = set()
    unit_names = set(names)
    for func in functions:
        hoisted = ast.FunctionDef(
            name=func.name,
            args=func.args,
            body=_with_prelude(func.body, prelude),
            decorator_list=func.decorator_list,
            returns=func.returns,
            type_comment=None,
        )
        ast.copy_location(hoisted, func)
        ast.fix_missing_locations(hoisted)
        unit_source = ast.unparse(hoisted)
        doc = ast.get_docstring(func) or ""
        units[func.name] = FunctionUnit(
            name=func.name,
            signature=_unit_signature(func),
            source=unit_source,
            doc=doc,
        )
        for used in _names_used(hoisted) & unit_names - {func.name}:
            deps.add((func.name, used))

    return CodeSolution(units=units, deps=frozenset(deps), entrypoint=entrypoint)


def _with_prelude(body: list[ast.stmt], prelude: list[ast.stmt]) -> list[ast.stmt]:
    if not prelude:
        return list(body)
    out = list(body)
    insert_at = 0
    if out and isinstance(out[0], ast.Expr) and isinstance(out[0].value, ast.Constant):
        insert_at = 1  # keep the docstring first
    return out[:insert_at] + [_clone(stmt) for stmt in prelude] + out[insert_at:]


def _clone(stmt: ast.stmt) -> ast.stmt:
    return ast.parse(ast.unparse(stmt)).body[0]


def solution_source(solution: CodeSolution) -> str:
    """Concatenate unit sources in dependency order (for prompts and exports)."""
    from .model import dependency_order

    return "\n\n".join(solution.units[name].source for name in dependency_order(solution))


def replace_unit(solution: CodeSolution, unit_name: str, new_unit_source: str) -> CodeSolution:
    """Rebuild a solution with one unit's source replaced.

    The replacement goes through the same hoisting pipeline (so imports in
    the generated snippet end up inside the function), then the whole module
    is re-parsed so dependency edges reflect the new source. Units other than
    the replaced one come out byte-identical.
    """
    if unit_name not in solution.units:
        raise SourceParseError(f"unknown unit: {unit_name!r}")
    try:
        mini = solution_from_source(new_unit_source, entrypoint=unit_name)
    except SourceParseError as exc:
        raise SourceParseError(f"rewritten unit {unit_name!r}: {exc}") from exc
    replacement = mini.units[unit_name].source
    from .model import dependency_order

    parts = []
    for name in dependency_order(solution):
        parts.append(replacement if name == unit_name else solution.units[name].source)
    return solution_from_source("\n\n".join(parts), solution.entrypoint)


def missing_references(solution: CodeSolution) -> set[str]:
    """Names called like functions that no unit, import, builtin, or local binds."""
    missing: set[str] = set()
    unit_names = set(solution.units)
    for unit in solution.units.values():
        func = ast.parse(unit.source).body[0]
        bound = {a.arg for a in ast.walk(func) if isinstance(a, ast.arg)}
        for node in ast.walk(func):
            if isinstance(node, (ast.Import, ast.ImportFrom)):
                bound |= _bound_names(node)
            elif isinstance(node, ast.Name) and isinstance(node.ctx, ast.Store):
                bound.add(node.id)
            elif isinstance(node, (ast.FunctionDef, ast.Lambda)) and node is not func:
                if isinstance(node, ast.FunctionDef):
                    bound.add(node.name)
        for node in ast.walk(func):
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
                name = node.func.id
                if name not in unit_names and name not in bound and name not in BUILTIN_NAMES:
                    missing.add(name)
    return missing
