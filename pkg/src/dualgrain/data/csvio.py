"""Windowed CSV import/export.

Format: header ``label,c0_t0,c0_t1,...,c{C-1}_t{L-1}``, one sample per row,
channel-major, '.' decimal, UTF-8.  Floats are written with shortest
round-tripping repr so export -> ingest is lossless.
"""

import re

import numpy as np

from ..errors import ParseError
from .signals import SignalSample

_COL_RE = re.compile(r"^c(\d+)_t(\d+)$")


def header_columns(n_channels, length):
    return ["label"] + [f"c{c}_t{t}" for c in range(n_channels) for t in range(length)]


def export_csv(samples, path):
    samples = list(samples)
    if not samples:
        raise ParseError("cannot export an empty sample list (header shape unknown)")
    c, l = samples[0].values.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header_columns(c, l)) + "\n")
        for s in samples:
            if s.values.shape != (c, l):
                raise ParseError(f"sample {s.sample_id} has shape {s.values.shape}, expected {(c, l)}")
            row = [str(int(s.label))] + [repr(float(v)) for v in s.values.ravel()]
            fh.write(",".join(row) + "\n")


def _parse_header(fields):
    if not fields or fields[0] != "label":
        raise ParseError("missing 'label' column in header", line=1)
    c_max = t_max = -1
    for i, name in enumerate(fields[1:]):
        m = _COL_RE.match(name)
        if m is None:
            raise ParseError(f"unrecognized column name {name!r}", line=1)
        c_max = max(c_max, int(m.group(1)))
        t_max = max(t_max, int(m.group(2)))
    n_channels, length = c_max + 1, t_max + 1
    expected = header_columns(n_channels, length)
    if fields != expected:
        raise ParseError("header is not channel-major c0_t0..c{C-1}_t{L-1}", line=1)
    return n_channels, length


def ingest_csv(path):
    """Parse a windowed CSV into SignalSamples; errors name the offending line."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ParseError("empty file, expected a header", line=1)
        n_channels, length = _parse_header(header_line.rstrip("\n").split(","))
        n_cols = 1 + n_channels * length

        samples = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != n_cols:
                raise ParseError(f"expected {n_cols} fields, got {len(fields)}", line=lineno)
            try:
                label = int(fields[0])
            except ValueError:
                raise ParseError(f"label {fields[0]!r} is not an integer", line=lineno) from None
            try:
                values = np.array([float(f) for f in fields[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric value in row", line=lineno) from None
            if not np.isfinite(values).all():
                raise ParseError("non-finite value in row", line=lineno)
            samples.append(
                SignalSample(values=values.reshape(n_channels, length), label=label, sample_id=len(samples))
            )
    return samples
