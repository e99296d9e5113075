"""Regression tables: estimates with stars, parenthesised standard errors, diagnostics footer."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field

from scipy import stats

from .errors import ConfigError

STARS = ((0.1, "*"), (0.05, "**"), (0.01, "***"))

FOOTER_KEYS = ("n_obs", "r2_within", "first_stage_f", "underid_lm", "underid_p", "ar_stat", "ar_p", "ar_set")

FOOTER_LABELS = {
    "n_obs": "Observations",
    "n_entities": "Entities",
    "r2_within": "R-squared (within)",
    "first_stage_f": "F first stage",
    "underid_lm": "KP rk LM statistic",
    "underid_p": "KP rk LM p-value",
    "ar_stat": "AR Wald test",
    "ar_p": "AR Wald p-value",
    "ar_set": "AR confidence set",
}


def stars(p, thresholds=STARS):
    """Significance marker for a two-sided p-value.

    ``thresholds`` run from the weakest to the strongest mark with strictly
    decreasing cut-offs; a p-value equal to a cut-off gets the weaker mark.
    """
    out = ""
    for cut, mark in thresholds:
        if p < cut:
            out = mark
    return out


def two_sided_p(estimate, se, dof=None):
    """Two-sided p-value from the t distribution (normal when ``dof`` is None)."""
    if not se > 0:
        return math.nan
    t = abs(estimate / se)
    return float(2 * (stats.norm.sf(t) if dof is None else stats.t.sf(t, dof)))


def format_cell(estimate, se, p, digits=3, thresholds=STARS):
    return f"{estimate:.{digits}f}{stars(p, thresholds)} ({se:.{digits}f})"


@dataclass(frozen=True)
class TableLayout:
    """Columns of results plus rendering choices.

    ``columns`` is a sequence of ``(label, EstimationResult)``. ``rows``
    defaults to every reported coefficient in order of first appearance;
    ``row_labels`` renames them for display.
    """

    columns: tuple
    rows: tuple | None = None
    footer: tuple = FOOTER_KEYS
    thresholds: tuple = STARS
    digits: int = 3
    row_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = tuple((str(lab), res) for lab, res in self.columns)
        object.__setattr__(self, "columns", cols)
        if not cols:
            raise ConfigError("a table needs at least one column")
        cuts = [c for c, _ in self.thresholds]
        if any(b >= a for a, b in zip(cuts, cuts[1:])):
            raise ConfigError("star thresholds must be strictly decreasing")
        if self.rows is None:
            seen = []
            for _, res in cols:
                seen.extend(n for n in res.coefficients if n not in seen)
            object.__setattr__(self, "rows", tuple(seen))
        else:
            object.__setattr__(self, "rows", tuple(self.rows))
        for r in self.rows:
            if not any(r in res.coefficients for _, res in cols):
                raise ConfigError(f"row {r!r} is not a coefficient of any column")
        bad = set(self.footer) - set(FOOTER_LABELS)
        if bad:
            raise ConfigError(f"unknown footer statistics: {sorted(bad)}")


def _body(layout):
    """Rows of display strings: (label, cells) pairs."""
    d = layout.digits
    out = []
    for name in layout.rows:
        est_cells, se_cells = [], []
        for _, res in layout.columns:
            if name not in res.coefficients:
                est_cells.append("")
                se_cells.append("")
                continue
            b = res.coefficients[name]
            se = res.std_errors[name]
            p = two_sided_p(b, se, res.dof_residual)
            est_cells.append(f"{b:.{d}f}{stars(p, layout.thresholds)}")
            se_cells.append(f"({se:.{d}f})")
        out.append((layout.row_labels.get(name, name), est_cells))
        out.append(("", se_cells))
    return out


def _footer_value(key, res, digits):
    diag = res.diagnostics
    if key == "n_obs":
        return str(res.n_obs)
    if key == "n_entities":
        return str(res.n_entities)
    if key == "r2_within":
        return "" if math.isnan(res.r_squared_within) else f"{res.r_squared_within:.{digits}f}"
    if diag is None:
        return ""
    if key == "first_stage_f":
        return f"{diag.first_stage_f.statistic:.{digits}f}"
    if key == "underid_lm":
        return f"{diag.underid_lm.statistic:.{digits}f}"
    if key == "underid_p":
        return f"{diag.underid_lm.pvalue:.{digits}f}"
    if key == "ar_stat":
        return f"{diag.ar_test.statistic:.{digits}f}"
    if key == "ar_p":
        return f"{diag.ar_test.pvalue:.{digits}f}"
    return diag.ar_confidence_set.describe(digits)


def _footer(layout):
    return [(FOOTER_LABELS[k], [_footer_value(k, res, layout.digits) for _, res in layout.columns])
            for k in layout.footer]


def _notes(layout):
    legend = ", ".join(f"{mark} p<{cut:g}" for cut, mark in reversed(layout.thresholds))
    covs = sorted({res.covariance.kind for _, res in layout.columns})
    kind = {"robust": "robust (HC1)", "cluster": "clustered by entity", "classical": "classical"}
    return [f"Standard errors in parentheses: {', '.join(kind[c] for c in covs)}.", legend + "."]


def _text(layout):
    header = [""] + [lab for lab, _ in layout.columns]
    body, foot = _body(layout), _footer(layout)
    rows = [(lab, cells) for lab, cells in body + foot]
    w0 = max(len(header[0]), *(len(lab) for lab, _ in rows))
    widths = [max(len(h), *(len(c[j]) for _, c in rows)) for j, h in enumerate(header[1:])]
    line = lambda lab, cells: (lab.ljust(w0) + "".join("  " + c.rjust(w) for c, w in zip(cells, widths))).rstrip()
    rule = "-" * (w0 + sum(w + 2 for w in widths))
    out = [rule, line("", header[1:]), rule]
    out += [line(lab, c) for lab, c in body]
    out.append(rule)
    out += [line(lab, c) for lab, c in foot]
    out.append(rule)
    out += _notes(layout)
    return "\n".join(out) + "\n"


def _csv(layout):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["term"] + [lab for lab, _ in layout.columns])
    for lab, cells in _body(layout) + _footer(layout):
        w.writerow([lab] + cells)
    return buf.getvalue()


_TEX_ESC = {"&": r"\&", "%": r"\%", "$": r"\$", "#": r"\#", "_": r"\_", "{": r"\{", "}": r"\}"}


def _tex(s):
    return "".join(_TEX_ESC.get(ch, ch) for ch in s)


def _latex(layout):
    n = len(layout.columns)
    out = [r"\begin{tabular}{l" + "c" * n + "}", r"\hline"]
    out.append(" & ".join([""] + [_tex(lab) for lab, _ in layout.columns]) + r" \\")
    out.append(r"\hline")
    for lab, cells in _body(layout):
        out.append(" & ".join([_tex(lab)] + [_tex(c) for c in cells]) + r" \\")
    out.append(r"\hline")
    for lab, cells in _footer(layout):
        out.append(" & ".join([_tex(lab)] + [_tex(c) for c in cells]) + r" \\")
    out.append(r"\hline")
    out.append(r"\end{tabular}")
    out += ["% " + s for s in _notes(layout)]
    return "\n".join(out) + "\n"


def format_table(layout, style="text"):
    """Render ``layout`` as ``text``, ``csv`` or ``latex``."""
    try:
        render = {"text": _text, "csv": _csv, "latex": _latex}[style]
    except KeyError:
        raise ConfigError(f"unknown table style {style!r}; expected text, csv or latex") from None
    return render(layout)


_NUM = re.compile(r"^\(?(-?\d+(?:\.\d+)?)\)?(\**)$")


def parse_table_csv(text):
    """Read back the coefficient block of a CSV table.

    Returns ``{(term, column): (estimate, std_error, stars)}``.
    """
    rows = list(csv.reader(io.StringIO(text)))
    header, rows = rows[0], rows[1:]
    out = {}
    i = 0
    while i + 1 < len(rows) and rows[i + 1][0] == "" and rows[i][0] not in FOOTER_LABELS.values():
        term, est_row, se_row = rows[i][0], rows[i], rows[i + 1]
        for j, col in enumerate(header[1:], start=1):
            if est_row[j] == "":
                continue
            m_est, m_se = _NUM.match(est_row[j]), _NUM.match(se_row[j])
            out[(term, col)] = (float(m_est.group(1)), float(m_se.group(1)), m_est.group(2))
        i += 2
    return out
