"""Labeled events and the tab-separated formats that carry them."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

from hybridsed.errors import DataError


@dataclass(frozen=True)
class LabeledEvent:
    onset_s: float
    offset_s: float
    class_name: str
    score: float = 1.0

    def __post_init__(self):
        if not self.onset_s < self.offset_s:
            raise DataError(f"event onset {self.onset_s} must precede offset {self.offset_s}")
        if not self.class_name:
            raise DataError("event class name is empty")

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_event_tsv(path, require_label: bool = True):
    """Parse ``filename<TAB>onset<TAB>offset[<TAB>class]`` lines.

    A header line is recognized (and skipped) when its onset column is not a
    number.  Rows with only a filename list a clip without events.  Returns an
    ordered mapping filename -> list of events sorted by onset; unlabeled
    boundary files get the placeholder class ``"?"``.
    """
    out = OrderedDict()
    lines = Path(path).read_text().splitlines()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if lineno == 1 and len(parts) >= 2 and not _is_float(parts[1]):
            continue
        name = parts[0].strip()
        if len(parts) == 1 or all(not p.strip() for p in parts[1:]):
            out.setdefault(name, [])
            continue
        if len(parts) < (4 if require_label else 3):
            raise DataError(f"{path}:{lineno}: expected "
                            f"{'4' if require_label else '3'} tab-separated fields")
        try:
            onset, offset = float(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: onset/offset are not numbers") from None
        label = parts[3].strip() if len(parts) > 3 else "?"
        if offset <= onset:
            raise DataError(f"{path}:{lineno}: offset {offset} is not after onset {onset}")
        if onset < 0:
            raise DataError(f"{path}:{lineno}: negative onset {onset}")
        out.setdefault(name, []).append(LabeledEvent(onset, offset, label))
    for name in out:
        out[name].sort(key=lambda ev: (ev.onset_s, ev.offset_s, ev.class_name))
    return out


def format_event_rows(filename, events, with_label: bool = True):
    rows = []
    for ev in events:
        row = f"{filename}\t{ev.onset_s:.3f}\t{ev.offset_s:.3f}"
        if with_label:
            row += f"\t{ev.class_name}"
        rows.append(row)
    return rows


def write_event_tsv(path, events_by_file, with_label: bool = True, header: bool = False):
    """Write events as TSV with 3-decimal times; clips without events emit no line."""
    lines = []
    if header:
        lines.append("filename\tonset\toffset" + ("\tevent_label" if with_label else ""))
    for name, events in events_by_file.items():
        lines.extend(format_event_rows(name, events, with_label))
    Path(path).write_text("".join(line + "\n" for line in lines))
