"""Text file formats: trials, counts, PEFs, bit strings, key-value reports and plot columns."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .bellmodel import ConditionalDistribution
from .certify import Trials
from .mlfit import FrequencyTable
from .pefopt import PEF


class ParseError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = "" if path is None else f"{path}:"
        where += "" if line is None else f"{line}: "
        super().__init__(where + message if where else message)
        self.path = path
        self.line = line


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _bit(tok: str, path, lineno: int) -> int:
    if tok.strip() not in ("0", "1"):
        raise ParseError(f"expected 0 or 1, got {tok.strip()!r}", path, lineno)
    return int(tok)


def read_trials(path) -> Trials:
    """Trials from ``x,y,a,b[,t]`` lines; a test-flag column must be present on all lines or none."""
    rows, flags = [], []
    for lineno, line in _data_lines(path):
        toks = line.split(",")
        if len(toks) not in (4, 5):
            raise ParseError(f"expected 4 or 5 fields, got {len(toks)}", path, lineno)
        rows.append([_bit(t, path, lineno) for t in toks[:4]])
        if len(toks) == 5:
            flags.append(_bit(toks[4], path, lineno))
        if flags and len(flags) != len(rows):
            raise ParseError("test flag column present on some lines only", path, lineno)
    if not rows:
        raise ParseError("no trials", path)
    arr = np.array(rows, np.int8)
    t = np.array(flags, np.int8) if flags else None
    return Trials(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], t)


def ingest_trials(path) -> tuple[Trials, FrequencyTable]:
    """Parse a trial file and tally its frequency table."""
    trials = read_trials(path)
    return trials, trials.frequency_table()


def write_trials(path, trials: Trials) -> None:
    flagged = trials.t is not None
    cols = [trials.x, trials.y, trials.a, trials.b] + ([trials.t] if flagged else [])
    np.savetxt(path, np.column_stack(cols), fmt="%d", delimiter=",", header="x,y,a,b" + (",t" if flagged else ""))


def read_counts(path) -> FrequencyTable:
    """Counts from ``x,y,a,b,count`` lines; repeated cells add up."""
    n = np.zeros((4, 4))
    for lineno, line in _data_lines(path):
        toks = line.split(",")
        if len(toks) != 5:
            raise ParseError(f"expected 5 fields, got {len(toks)}", path, lineno)
        x, y, a, b = (_bit(t, path, lineno) for t in toks[:4])
        try:
            v = float(toks[4])
        except ValueError:
            raise ParseError(f"bad count {toks[4].strip()!r}", path, lineno) from None
        if not (math.isfinite(v) and v >= 0):
            raise ParseError("counts must be finite and nonnegative", path, lineno)
        n[x + 2 * y, a + 2 * b] += v
    return FrequencyTable(n)


def write_counts(path, table: FrequencyTable | np.ndarray) -> None:
    n = table.counts if isinstance(table, FrequencyTable) else np.asarray(table, float).reshape(4, 4)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x,y,a,b,count\n")
        for x, y, a, b in np.ndindex(2, 2, 2, 2):
            fh.write(f"{x},{y},{a},{b},{n[x + 2 * y, a + 2 * b]:.17g}\n")


def read_distribution(path) -> ConditionalDistribution:
    """Four lines of four comma-separated probabilities, rows ``xy`` and columns ``ab`` in ``00, 10, 01, 11`` order."""
    rows = []
    for lineno, line in _data_lines(path):
        try:
            rows.append([float(t) for t in line.split(",")])
        except ValueError:
            raise ParseError("bad number", path, lineno) from None
        if len(rows[-1]) != 4:
            raise ParseError(f"expected 4 fields, got {len(rows[-1])}", path, lineno)
    if len(rows) != 4:
        raise ParseError(f"expected 4 rows, got {len(rows)}", path)
    try:
        return ConditionalDistribution(np.array(rows))
    except ValueError as exc:
        raise ParseError(str(exc), path) from None


def write_distribution(path, cond) -> None:
    t = cond.table if isinstance(cond, ConditionalDistribution) else np.asarray(cond, float)
    np.savetxt(path, t, fmt="%.15f", delimiter=",")


def write_pef(path, F: PEF) -> None:
    """Power followed by the 16 values in ``(x, y, a, b)`` lexicographic order, comma separated."""
    if F.n_settings != 4:
        raise ValueError("only four-setting PEFs have a file format")
    vals = [F.power] + [F.values[x + 2 * y, a + 2 * b] for x, y, a, b in np.ndindex(2, 2, 2, 2)]
    Path(path).write_text(",".join(f"{v:.17g}" for v in vals) + "\n", encoding="utf-8")


def read_pef(path) -> PEF:
    """Inverse of :func:`write_pef`; values may also be split across lines."""
    vals = []
    for lineno, line in _data_lines(path):
        try:
            vals.extend(float(t) for t in line.replace(",", " ").split())
        except ValueError:
            raise ParseError(f"bad number in {line!r}", path, lineno) from None
    if len(vals) != 17:
        raise ParseError(f"expected 17 numbers, got {len(vals)}", path)
    table = np.zeros((4, 4))
    for k, (x, y, a, b) in enumerate(np.ndindex(2, 2, 2, 2)):
        table[x + 2 * y, a + 2 * b] = vals[1 + k]
    return PEF(table, vals[0])


def read_bits(path) -> str:
    """Concatenation of the file's ``0``/``1`` lines."""
    parts = []
    for lineno, line in _data_lines(path):
        if any(ch not in "01" for ch in line):
            raise ParseError("bit lines contain only 0 and 1", path, lineno)
        parts.append(line)
    return "".join(parts)


def write_bits(path, bits, width: int = 64) -> None:
    s = str(bits)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(0, len(s), width):
            fh.write(s[i:i + width] + "\n")


def read_kv(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    for lineno, line in _data_lines(path):
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, lineno)
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_kv(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def write_kv(path, items: dict) -> None:
    Path(path).write_text(format_kv(items), encoding="utf-8")


def write_columns(path, x, y, header: str = "x,y") -> None:
    """Two-column comma-delimited plot data."""
    np.savetxt(path, np.column_stack([np.asarray(x, float), np.asarray(y, float)]), fmt="%.10g",
               delimiter=",", header=header)
