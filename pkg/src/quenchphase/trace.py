"""Sampled coherence records shared by the simulator, the analytics and the fits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KNOWN_CONTROL_COLUMNS = ("control_value", "tau_us", "t_wait_us", "t_sl_us", "t_us")


class TraceFormatError(ValueError):
    """A coherence-trace CSV could not be parsed."""


@dataclass
class CoherenceTrace:
    """``<X>``, ``<Y>`` sampled against one control parameter.

    The phase convention is ``W = <X> - i<Y> = exp(-chi - i Phi)``, so
    ``Phi = atan2(<Y>, <X>)`` and ``|W| = hypot(<X>, <Y>)``.
    """

    control: np.ndarray
    x: np.ndarray
    y: np.ndarray
    control_name: str = "control_value"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.control = np.asarray(self.control, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if not (self.control.shape == self.x.shape == self.y.shape):
            raise ValueError("control, x and y must have the same shape")

    def __len__(self) -> int:
        return self.control.size

    @property
    def w(self) -> np.ndarray:
        return self.x - 1j * self.y

    @property
    def w_mag(self) -> np.ndarray:
        return np.hypot(self.x, self.y)

    @property
    def phi(self) -> np.ndarray:
        return np.arctan2(self.y, self.x)

    @classmethod
    def from_w(cls, control, w, control_name="control_value", **kw) -> "CoherenceTrace":
        w = np.asarray(w, dtype=complex)
        return cls(control, w.real, -w.imag, control_name=control_name, **kw)

    def to_csv(self, path=None, extended: bool = True) -> str:
        """Write ``control, x, y[, w_mag, phi]`` rows; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = [self.control_name, "x", "y"] + (["w_mag", "phi"] if extended else [])
        writer.writerow(cols)
        wm, ph = self.w_mag, self.phi
        for i in range(len(self)):
            row = [self.control[i], self.x[i], self.y[i]]
            if extended:
                row += [wm[i], ph[i]]
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_trace_csv(path) -> CoherenceTrace:
    """Parse a trace CSV.

    Lines starting with ``#`` are metadata.  The header must contain ``x``
    and ``y``; the control column is ``control_value`` or one of the sweep
    axis names written by the CLI (``tau_us``, ``t_wait_us``, ...).

    Raises
    ------
    TraceFormatError
        With the 1-based line number of the first offending line.
    """
    text = Path(path).read_text()
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f.strip() for f in next(csv.reader([stripped]))]
        if header is None:
            header = fields
            missing = [c for c in ("x", "y") if c not in header]
            control = next((c for c in KNOWN_CONTROL_COLUMNS if c in header), None)
            if control is None:
                missing.insert(0, "control_value")
            if missing:
                raise TraceFormatError(f"line {lineno}: missing column(s) {missing}")
            idx = [header.index(control), header.index("x"), header.index("y")]
            continue
        if len(fields) != len(header):
            raise TraceFormatError(
                f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            rows.append([float(fields[i]) for i in idx])
        except ValueError:
            raise TraceFormatError(f"line {lineno}: non-numeric value") from None
    if header is None:
        raise TraceFormatError("line 1: empty file")
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return CoherenceTrace(arr[:, 0], arr[:, 1], arr[:, 2], control_name=control)
