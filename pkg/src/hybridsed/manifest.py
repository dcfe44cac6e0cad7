"""Dataset manifests built from weak and strong tab-separated label files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from hybridsed.errors import DataError
from hybridsed.events import read_event_tsv


@dataclass(frozen=True)
class Clip:
    filename: str
    duration_s: float | None = None
    weak_labels: frozenset = frozenset()
    strong_events: tuple | None = None


@dataclass
class Manifest:
    clips: list
    audio_dir: Path = Path(".")

    def __post_init__(self):
        names = [c.filename for c in self.clips]
        if len(set(names)) != len(names):
            raise DataError("manifest filenames must be unique")
        self.audio_dir = Path(self.audio_dir)

    def __len__(self):
        return len(self.clips)

    def path(self, clip: Clip) -> Path:
        return self.audio_dir / clip.filename

    @property
    def class_names(self):
        names = {lab for c in self.clips for lab in c.weak_labels}
        names |= {e.class_name for c in self.clips for e in (c.strong_events or ())}
        return sorted(names)


def read_weak_tsv(path):
    """``filename<TAB>label1,label2,...`` rows; an optional header is skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if lineno == 1 and parts[0].strip().lower() == "filename":
            continue
        if len(parts) > 2 or not parts[0].strip():
            raise DataError(f"{path}:{lineno}: expected 'filename<TAB>label1,label2,...'")
        name = parts[0].strip()
        labels = frozenset(x.strip() for x in parts[1].split(",") if x.strip()) \
            if len(parts) == 2 else frozenset()
        if name in out and out[name] != labels:
            raise DataError(f"{path}:{lineno}: conflicting duplicate row for {name}")
        out[name] = labels
    return out


def parse_manifest(weak_tsv=None, strong_tsv=None, audio_dir=None) -> Manifest:
    """Merge weak and strong label files into one manifest.

    Clips that only appear in the strong file get empty weak labels.  Audio
    paths are resolved against ``audio_dir`` (default: the directory of the
    first label file given).
    """
    if weak_tsv is None and strong_tsv is None:
        raise DataError("need a weak and/or a strong label file")
    weak = read_weak_tsv(weak_tsv) if weak_tsv is not None else {}
    strong = read_event_tsv(strong_tsv) if strong_tsv is not None else {}
    clips = []
    for name, labels in weak.items():
        clips.append(Clip(name, None, labels, tuple(strong[name]) if name in strong else None))
    for name, events in strong.items():
        if name not in weak:
            clips.append(Clip(name, None, frozenset(), tuple(events)))
    if audio_dir is None:
        audio_dir = Path(weak_tsv if weak_tsv is not None else strong_tsv).parent
    return Manifest(clips, audio_dir)
