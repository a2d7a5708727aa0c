"""
Imputation model formulas.

Grammar (one formula per timepoint)::

    formula  := response "=" term+
    term     := IDENT | IDENT "*" IDENT
    IDENT    := letter (letter | digit | "_")*

Identifiers named ``D<j>`` or ``P<j>`` are class variables unless an explicit
class list is passed. An interaction pairs one class variable with one
continuous variable, in either order. Every formula carries an implicit
intercept. ``Y<j>`` are outcomes, ``R<j>`` residuals (residual-mode models).
"""
import enum
import logging
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import (
    EmptyDesign,
    EmptyModel,
    FormulaSyntaxError,
    UnknownVariable,
)

logger = logging.getLogger(__name__)

CLASS_NAME = re.compile(r"^[DP]\d+$")
IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
INDEXED = re.compile(r"^([A-Za-z]+)(\d+)$")
RANK_TOL = 1e-10
ON, OFF = "O", "X"
FINAL_PATTERNS = ("OOO", "OOX", "OXX", "XXX")


class ModelName(str, enum.Enum):
    CICS = "CICS"
    OICS = "OICS"
    PICS = "PICS"
    OIOS = "OIOS"
    PIOS = "PIOS"
    PIPS = "PIPS"
    OICS_R = "OICS_R"
    PICS_R = "PICS_R"


RESIDUAL_MODELS = frozenset({ModelName.OICS_R, ModelName.PICS_R})


@dataclass(frozen=True)
class Continuous:
    name: str

    def to_text(self):
        return self.name


@dataclass(frozen=True)
class Class:
    name: str

    def to_text(self):
        return self.name


@dataclass(frozen=True)
class Interaction:
    class_name: str
    cont_name: str

    def to_text(self):
        return f"{self.class_name}*{self.cont_name}"


@dataclass(frozen=True)
class Formula:
    response: str
    terms: tuple

    @property
    def timepoint(self):
        return _index(self.response)

    def variables(self):
        names = []
        for term in self.terms:
            if isinstance(term, Interaction):
                names.extend([term.class_name, term.cont_name])
            else:
                names.append(term.name)
        return list(dict.fromkeys(names))

    def class_names(self):
        names = []
        for term in self.terms:
            if isinstance(term, Class):
                names.append(term.name)
            elif isinstance(term, Interaction):
                names.append(term.class_name)
        return list(dict.fromkeys(names))

    def to_text(self):
        return f"{self.response} = " + " ".join(t.to_text() for t in self.terms)

    def __str__(self):
        return self.to_text()


def _index(name):
    match = INDEXED.match(name)
    return int(match.group(2)) if match else None


def _prefix(name):
    match = INDEXED.match(name)
    return match.group(1) if match else name


def parse_formula(text, classes=None):
    """Parse ``"Y3 = P3 Y0 Y1 D1*Y1 Y2 D2*Y2"`` into a Formula."""
    if text is None or not text.strip():
        raise FormulaSyntaxError("empty formula")
    if text.count("=") != 1:
        raise FormulaSyntaxError(f"expected exactly one '=' in {text!r}")

    def is_class(name):
        return name in classes if classes is not None else bool(CLASS_NAME.match(name))

    lhs, rhs = (part.strip() for part in text.split("="))
    if not IDENT.match(lhs):
        raise FormulaSyntaxError(f"bad response name {lhs!r}")
    tokens = re.sub(r"\s*\*\s*", "*", rhs).split()
    if not tokens:
        raise EmptyModel(f"{lhs} has no terms")

    terms = []
    for token in tokens:
        parts = token.split("*")
        if len(parts) > 2 or not all(IDENT.match(p) for p in parts):
            raise FormulaSyntaxError(f"malformed term {token!r}")
        if lhs in parts:
            raise FormulaSyntaxError(f"response {lhs} appears on the right-hand side")
        if len(parts) == 1:
            name = parts[0]
            term = Class(name) if is_class(name) else Continuous(name)
        else:
            a, b = parts
            if is_class(a) == is_class(b):
                raise FormulaSyntaxError(f"{token!r}: an interaction needs one class and one continuous variable")
            term = Interaction(a, b) if is_class(a) else Interaction(b, a)
        if term in terms:
            raise FormulaSyntaxError(f"duplicate term {token!r}")
        terms.append(term)
    return Formula(response=lhs, terms=tuple(terms))


@dataclass(frozen=True)
class ModelSpec:
    name: str
    formulas: tuple
    by_groups: tuple = ("Arm",)
    residual_mode: bool = False

    def __post_init__(self):
        if len(self.formulas) != 3:
            raise FormulaSyntaxError(f"{self.name}: need one formula per timepoint 1..3")
        for j, formula in enumerate(self.formulas, start=1):
            if formula.response != f"Y{j}":
                raise FormulaSyntaxError(f"{self.name}: formula {j} has response {formula.response}")
            for var in formula.variables():
                k = _index(var)
                kind = _prefix(var)
                if k is None:
                    continue
                if kind in ("Y", "R") and k >= j:
                    raise FormulaSyntaxError(f"{self.name}: step Y{j} cannot use {var}")
                if kind in ("D", "P") and k > j:
                    raise FormulaSyntaxError(f"{self.name}: step Y{j} cannot use {var}")
                if kind == "R" and not self.residual_mode:
                    raise FormulaSyntaxError(f"{self.name}: {var} requires residual mode")
        if self.name in ModelName.__members__:
            name = ModelName(self.name)
            if self.residual_mode != (name in RESIDUAL_MODELS):
                raise FormulaSyntaxError(f"{self.name}: residual_mode mismatch")
            if ("FinalPattern" in self.by_groups) != (name == ModelName.PIPS):
                raise FormulaSyntaxError(f"{self.name}: by-groups mismatch")

    def formula(self, j):
        return self.formulas[j - 1]

    def to_text(self):
        return "\n".join(f.to_text() for f in self.formulas)


MODEL_FORMULAS = {
    ModelName.CICS: ("Y1 = Y0", "Y2 = Y0 Y1", "Y3 = Y0 Y1 Y2"),
    ModelName.OICS: ("Y1 = D1 Y0", "Y2 = D2 Y0 Y1", "Y3 = D3 Y0 Y1 Y2"),
    ModelName.PICS: ("Y1 = P1 Y0", "Y2 = P2 Y0 Y1", "Y3 = P3 Y0 Y1 Y2"),
    ModelName.OIOS: ("Y1 = D1 Y0", "Y2 = D2 Y0 Y1 D2*Y1", "Y3 = D3 Y0 Y1 D3*Y1 Y2 D3*Y2"),
    ModelName.PIOS: ("Y1 = P1 Y0", "Y2 = P2 Y0 Y1 D1*Y1", "Y3 = P3 Y0 Y1 D1*Y1 Y2 D2*Y2"),
    ModelName.PIPS: ("Y1 = Y0", "Y2 = Y0 Y1", "Y3 = Y0 Y1 Y2"),
    ModelName.OICS_R: ("Y1 = D1 R0", "Y2 = D2 R0 R1", "Y3 = D3 R0 R1 R2"),
    ModelName.PICS_R: ("Y1 = P1 R0", "Y2 = P2 R0 R1", "Y3 = P3 R0 R1 R2"),
}


def builtin_spec(name):
    name = ModelName(name)
    return ModelSpec(
        name=name.value,
        formulas=tuple(parse_formula(text) for text in MODEL_FORMULAS[name]),
        by_groups=("Arm", "FinalPattern") if name == ModelName.PIPS else ("Arm",),
        residual_mode=name in RESIDUAL_MODELS,
    )


def pattern_string(disc_time, j):
    """On/off history through timepoint j, e.g. disc_time=2, j=3 -> 'OXX'."""
    return "".join(OFF if 0 < disc_time <= k else ON for k in range(1, j + 1))


@dataclass
class DerivedVars:
    d: np.ndarray  # (n, 3) 0/1
    p: tuple  # p[j-1]: pattern strings through j
    final_pattern: np.ndarray

    def columns(self):
        """Class columns keyed by variable name, coded as O/X strings."""
        cols = {}
        for j in range(1, 4):
            cols[f"D{j}"] = np.where(self.d[:, j - 1] == 1, OFF, ON)
            cols[f"P{j}"] = self.p[j - 1]
        cols["FinalPattern"] = self.final_pattern
        return cols


def derive_vars(subject):
    """D_j, P_j and the final pattern from a SubjectRecord, a disc_time or an array of them."""
    disc = getattr(subject, "disc_time", subject)
    disc = np.atleast_1d(np.asarray(disc, dtype=int))
    d = np.column_stack([((disc > 0) & (disc <= j)).astype(int) for j in range(1, 4)])
    p = tuple(np.array([pattern_string(t, j) for t in disc], dtype=object) for j in range(1, 4))
    return DerivedVars(d=d, p=p, final_pattern=p[2])


def reference_level(levels):
    """All-on-treatment level when present, else the first in sort order."""
    for level in levels:
        if isinstance(level, str) and level and set(level) == {ON}:
            return level
    return sorted(levels)[0]


@dataclass
class Design:
    matrix: np.ndarray
    labels: list
    intercept_columns: list = field(default_factory=list)  # intercept + class indicator columns

    @property
    def shape(self):
        return self.matrix.shape

    def column(self, label):
        return self.matrix[:, self.labels.index(label)]


def build_design(formula, rows):
    """
    Design matrix for ``formula`` over ``rows`` (a mapping of variable name to
    a per-row array). Class levels absent from ``rows`` are dropped.
    """
    missing = [v for v in formula.variables() if v not in rows]
    if missing:
        raise UnknownVariable(f"{formula.response}: unknown variable(s) {', '.join(missing)}")
    n = len(rows[formula.variables()[0]]) if formula.variables() else 0
    if n == 0:
        raise EmptyDesign(f"{formula.response}: no rows")

    columns = [np.ones(n)]
    labels = ["Intercept"]
    intercept_columns = [0]
    level_cache = {}

    def levels_for(name):
        if name not in level_cache:
            values = np.asarray(rows[name])
            present = sorted(set(values.tolist()))
            ref = reference_level(present)
            non_ref = [lvl for lvl in present if lvl != ref]
            j = _index(name)
            if _prefix(name) in ("D", "P") and j is not None:
                possible = 2 if _prefix(name) == "D" else j + 1
                if len(present) < possible:
                    logger.warning("%s: %s has %d of %d levels present, absent levels dropped",
                                   formula.response, name, len(present), possible)
            level_cache[name] = (values, non_ref)
        return level_cache[name]

    for term in formula.terms:
        if isinstance(term, Continuous):
            columns.append(np.asarray(rows[term.name], dtype=float))
            labels.append(term.name)
        elif isinstance(term, Class):
            values, non_ref = levels_for(term.name)
            for level in non_ref:
                intercept_columns.append(len(columns))
                columns.append((values == level).astype(float))
                labels.append(f"{term.name}[{level}]")
        else:
            values, non_ref = levels_for(term.class_name)
            cont = np.asarray(rows[term.cont_name], dtype=float)
            for level in non_ref:
                columns.append((values == level).astype(float) * cont)
                labels.append(f"{term.class_name}[{level}]:{term.cont_name}")
    return Design(matrix=np.column_stack(columns), labels=labels, intercept_columns=intercept_columns)


@dataclass
class EstimabilityReport:
    ok: bool
    rank: int
    n_rows: int
    n_columns: int
    resid_df: int
    reason: str = ""
    deficient: list = field(default_factory=list)

    def __bool__(self):
        return self.ok

    def describe(self):
        if self.ok:
            return "ok"
        detail = f" ({', '.join(self.deficient)})" if self.deficient else ""
        return f"{self.reason}: {self.n_rows} rows, rank {self.rank}, resid df {self.resid_df}{detail}"


def _rank(matrix):
    if matrix.shape[0] == 0:
        return 0, np.arange(matrix.shape[1])
    _, r, piv = linalg.qr(matrix, mode="economic", pivoting=True)
    norms = np.linalg.norm(matrix, axis=0)
    tol = RANK_TOL * float(norms.max()) if norms.size else 0.0
    rank = int(np.sum(np.abs(np.diag(r)) > tol))
    return rank, piv[rank:]


def estimability_check(design, min_resid_df=1, labels=None, impute_design=None, allow_aliased=False):
    """
    Check that a design can be fitted.

    Strict mode requires full column rank and ``rows - columns >= min_resid_df``.
    With ``allow_aliased`` exact collinearity is tolerated and the df test uses
    the rank. ``impute_design`` (same columns, rows to be imputed) flags columns
    that are active on those rows but identically zero on the fitting rows.
    """
    matrix = np.asarray(getattr(design, "matrix", design), dtype=float)
    labels = labels or getattr(design, "labels", None) or [f"x{i}" for i in range(matrix.shape[1])]
    n, p = matrix.shape
    rank, aliased = _rank(matrix)
    resid_df = n - (rank if allow_aliased else p)
    report = EstimabilityReport(ok=True, rank=rank, n_rows=n, n_columns=p, resid_df=resid_df)

    if impute_design is not None:
        target = np.asarray(getattr(impute_design, "matrix", impute_design), dtype=float)
        empty = [
            labels[c] for c in range(p)
            if target.shape[0] and np.any(target[:, c] != 0) and not np.any(matrix[:, c] != 0)
        ]
        if empty:
            report.ok, report.reason, report.deficient = False, "EmptyCell", empty
            return report
    if resid_df < min_resid_df:
        report.ok, report.reason = False, "InsufficientData"
        report.deficient = [labels[c] for c in aliased]
        return report
    if rank < p and not allow_aliased:
        report.ok, report.reason = False, "RankDeficient"
        report.deficient = [labels[c] for c in aliased]
    return report
