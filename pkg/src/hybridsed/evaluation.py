"""Event-based evaluation: collar matching, class-wise/macro/micro F and ER.

Matching is one-to-one per clip.  A (reference, prediction) pair is eligible
when the enabled criteria hold: onset within the onset collar, offset within
``max(offset_collar, offset_relative * reference length)``, equal labels.

Pairs are chosen in tiers -- first among pairs that satisfy every criterion,
then onset+offset regardless of label, then the requested criteria -- and
each tier starts with a greedy pass in reference onset order (closest onset,
then closest offset, then prediction order) followed by augmenting paths.
Augmentation never unmatches an event, so the result is a maximum matching
whose matched sets only grow as criteria are relaxed; this keeps macro F
non-increasing from onset-only to onset+offset to full scoring.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from hybridsed.errors import DataError

log = logging.getLogger(__name__)

MODES = OrderedDict([
    ("onset_only", dict(require_onset=True, require_offset=False, require_label=False)),
    ("offset_only", dict(require_onset=False, require_offset=True, require_label=False)),
    ("onset_offset", dict(require_onset=True, require_offset=True, require_label=False)),
    ("full", dict(require_onset=True, require_offset=True, require_label=True)),
])


@dataclass(frozen=True)
class MatchConfig:
    onset_collar_s: float = 0.200
    offset_collar_s: float = 0.200
    offset_relative: float = 0.20
    require_label: bool = True
    require_offset: bool = True
    require_onset: bool = True

    def __post_init__(self):
        if min(self.onset_collar_s, self.offset_collar_s, self.offset_relative) < 0:
            raise ValueError("collars must be non-negative")

    @classmethod
    def for_mode(cls, mode, **collars):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        return cls(**collars, **MODES[mode])


@dataclass(frozen=True)
class EventList:
    filename: str
    events: tuple

    def __post_init__(self):
        ev = tuple(self.events)
        object.__setattr__(self, "events", ev)
        _check_sorted(ev, self.filename)


@dataclass
class MatchResult:
    pairs: list  # (ref index, pred index)
    unmatched_ref: list
    unmatched_pred: list


@dataclass
class ClassStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def f_score(self) -> float:
        return f_measure(self.tp, self.fp, self.fn)


@dataclass
class EvalReport:
    per_class: dict = field(default_factory=dict)  # class -> ClassStats
    micro_f: float = 0.0
    macro_f: float = 0.0
    error_rate: float = 0.0
    S: int = 0
    D: int = 0
    I: int = 0
    N: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0


def f_measure(tp, fp, fn) -> float:
    den = 2 * tp + fp + fn
    return 2.0 * tp / den if den else 0.0


def _check_sorted(events, name=""):
    onsets = [e.onset_s for e in events]
    if any(b < a for a, b in zip(onsets, onsets[1:])):
        raise DataError(f"events of {name or 'clip'} are not sorted by onset")


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def eligibility(ref, pred, cfg: MatchConfig):
    """Boolean matrix: ``E[r, p]`` is True when the pair may be matched."""
    e = np.ones((len(ref), len(pred)), dtype=bool)
    if not len(ref) or not len(pred):
        return e
    r_on = np.array([x.onset_s for x in ref])[:, None]
    r_off = np.array([x.offset_s for x in ref])[:, None]
    p_on = np.array([x.onset_s for x in pred])[None, :]
    p_off = np.array([x.offset_s for x in pred])[None, :]
    eps = 1e-9
    if cfg.require_onset:
        e &= np.abs(p_on - r_on) <= cfg.onset_collar_s + eps
    if cfg.require_offset:
        collar = np.maximum(cfg.offset_collar_s, cfg.offset_relative * (r_off - r_on))
        e &= np.abs(p_off - r_off) <= collar + eps
    if cfg.require_label:
        e &= np.array([[a.class_name == b.class_name for b in pred] for a in ref], dtype=bool)
    return e


def _extend(match_r, match_p, elig, prefs):
    # Greedy pass over unmatched references, then augmenting paths (Kuhn).
    for r in range(len(match_r)):
        if match_r[r] is None:
            for p in prefs[r]:
                if elig[r, p] and match_p[p] is None:
                    match_r[r], match_p[p] = p, r
                    break

    def augment(r, seen):
        for p in prefs[r]:
            if elig[r, p] and p not in seen:
                seen.add(p)
                if match_p[p] is None or augment(match_p[p], seen):
                    match_r[r], match_p[p] = p, r
                    return True
        return False

    for r in range(len(match_r)):
        if match_r[r] is None:
            augment(r, set())


def match_events(ref, pred, cfg: MatchConfig | None = None) -> MatchResult:
    """One-to-one maximum matching of one clip's reference and predicted events.

    ``ref`` and ``pred`` are sequences of LabeledEvent (or EventList) sorted
    by onset.
    """
    cfg = cfg or MatchConfig()
    ref = ref.events if isinstance(ref, EventList) else tuple(ref)
    pred = pred.events if isinstance(pred, EventList) else tuple(pred)
    _check_sorted(ref, "reference")
    _check_sorted(pred, "prediction")

    prefs = [sorted(range(len(pred)),
                    key=lambda p, r=r: (abs(pred[p].onset_s - ref[r].onset_s),
                                        abs(pred[p].offset_s - ref[r].offset_s), p))
             for r in range(len(ref))]
    tiers = [replace(cfg, require_onset=True, require_offset=True, require_label=True)]
    if not cfg.require_label:
        tiers.append(replace(cfg, require_onset=True, require_offset=True, require_label=False))
    tiers.append(cfg)

    match_r = [None] * len(ref)
    match_p = [None] * len(pred)
    for tier in tiers:
        _extend(match_r, match_p, eligibility(ref, pred, tier), prefs)

    pairs = [(r, p) for r, p in enumerate(match_r) if p is not None]
    return MatchResult(
        pairs=pairs,
        unmatched_ref=[r for r, p in enumerate(match_r) if p is None],
        unmatched_pred=[p for p, r in enumerate(match_p) if r is None],
    )


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def _as_mapping(lists):
    if isinstance(lists, dict):
        return {k: tuple(v.events if isinstance(v, EventList) else v) for k, v in lists.items()}
    return {el.filename: el.events for el in lists}


def score(refs, preds, cfg: MatchConfig | None = None, vocabulary=None,
          strict: bool = True) -> EvalReport:
    """Score predictions against references over a set of clips.

    ``refs``/``preds`` are lists of EventList or mappings filename -> events.
    A clip missing from ``preds`` counts as an empty prediction.  Predictions
    with a class outside ``vocabulary`` (default: the reference classes when
    ``strict``) raise DataError, or are only logged and counted as false
    positives when ``strict`` is False.
    """
    cfg = cfg or MatchConfig()
    refs = _as_mapping(refs)
    preds = _as_mapping(preds)
    ref_classes = sorted({e.class_name for evs in refs.values() for e in evs})
    if vocabulary is not None:
        vocab = set(vocabulary)
        unknown_ref = set(ref_classes) - vocab
        if unknown_ref:
            raise DataError(f"reference classes outside the vocabulary: {sorted(unknown_ref)}")
    else:
        vocab = set(ref_classes)
    unknown = sorted({e.class_name for evs in preds.values() for e in evs} - vocab)
    if unknown:
        if strict and vocabulary is not None:
            raise DataError(f"predicted classes outside the vocabulary: {unknown}")
        log.warning("predicted classes not in the vocabulary (counted as false positives): %s",
                    ", ".join(unknown))

    report = EvalReport()
    stats = {c: ClassStats() for c in ref_classes}
    for name in sorted(set(refs) | set(preds)):
        ref = refs.get(name, ())
        pred = preds.get(name, ())
        m = match_events(ref, pred, cfg)
        for r, _ in m.pairs:
            stats.setdefault(ref[r].class_name, ClassStats()).tp += 1
        for r in m.unmatched_ref:
            stats.setdefault(ref[r].class_name, ClassStats()).fn += 1
        for p in m.unmatched_pred:
            stats.setdefault(pred[p].class_name, ClassStats()).fp += 1
        fp, fn = len(m.unmatched_pred), len(m.unmatched_ref)
        s = min(fp, fn)
        report.S += s
        report.D += fn - s
        report.I += fp - s
        report.N += len(ref)
        report.tp += len(m.pairs)
        report.fp += fp
        report.fn += fn

    report.per_class = dict(sorted(stats.items()))
    report.micro_f = f_measure(report.tp, report.fp, report.fn)
    present = [stats[c].f_score for c in ref_classes]
    report.macro_f = float(np.mean(present)) if present else 0.0
    errors = report.S + report.D + report.I
    if report.N:
        report.error_rate = errors / report.N
    else:
        report.error_rate = 0.0 if errors == 0 else float("inf")
    return report


def subsystem_report(refs, preds, modes=tuple(MODES), **collars):
    """Macro F per scoring mode (the onset / offset / label decomposition)."""
    out = OrderedDict()
    for mode in modes:
        out[mode] = score(refs, preds, MatchConfig.for_mode(mode, **collars), strict=False).macro_f
    return out


# ---------------------------------------------------------------------------
# Report formatting
# ---------------------------------------------------------------------------

def format_report(report: EvalReport, title: str = "Event-based metrics") -> str:
    lines = [title, "=" * len(title),
             f"{'class':<24}{'TP':>6}{'FP':>6}{'FN':>6}{'F':>9}"]
    for name, st in report.per_class.items():
        lines.append(f"{name:<24}{st.tp:>6}{st.fp:>6}{st.fn:>6}{100 * st.f_score:>8.2f}%")
    lines += [
        "",
        f"macro F     {100 * report.macro_f:6.2f}%",
        f"micro F     {100 * report.micro_f:6.2f}%",
        f"error rate  {report.error_rate:6.3f}   (S={report.S} D={report.D} "
        f"I={report.I} N={report.N})",
    ]
    return "\n".join(lines)


def report_key_values(report: EvalReport, prefix: str = "") -> str:
    """Machine-readable ``key=value`` block."""
    kv = [
        ("micro_f", f"{report.micro_f:.6f}"),
        ("macro_f", f"{report.macro_f:.6f}"),
        ("er", f"{report.error_rate:.6f}"),
        ("s", report.S), ("d", report.D), ("i", report.I), ("n", report.N),
    ]
    lines = [f"{prefix}{k}={v}" for k, v in kv]
    for name, st in report.per_class.items():
        lines.append(f"{prefix}class.{name}=tp:{st.tp},fp:{st.fp},fn:{st.fn},f:{st.f_score:.6f}")
    return "\n".join(lines)
