"""Batch commands: train a model bundle, detect, label, evaluate, synthesize."""

from __future__ import annotations

import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hybridsed.audio import (auditory_spectrogram, load_audio, log_mel_energy,
                             short_term_energy, stack_frames)
from hybridsed.boundaries import detect_boundaries, fit_pca, orient_to_energy
from hybridsed.config import PipelineConfig
from hybridsed.errors import DataError
from hybridsed.evaluation import (MODES, format_report, report_key_values, score)
from hybridsed.events import format_event_rows, read_event_tsv
from hybridsed.labeling import (PosteriorMatrix, classifier_features, label_boundaries,
                                load_posteriors, majority_vote, predict_posteriors,
                                train_frame_classifier)
from hybridsed.manifest import Manifest
from hybridsed.modelio import load_model, save_model
from hybridsed.models import (crbm_train, rbm_train, rbm_transform, standardize_fit,
                              transform_sequence)
from hybridsed.synth import SynthSpec, write_scene_set

log = logging.getLogger(__name__)

CONFIG_FILE = "config.txt"
LOG_FILE = "train.log"


@dataclass
class ClipFeatures:
    spectrogram: object
    energy: object
    duration_s: float
    logmel: object = None


@dataclass
class Bundle:
    config: PipelineConfig
    rbm: object
    crbms: list
    pcas: list
    classifier: object = None


def _map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def clip_features(path, with_logmel: bool = False) -> ClipFeatures:
    w = load_audio(path)
    return ClipFeatures(auditory_spectrogram(w), short_term_energy(w), w.duration_s,
                        log_mel_energy(w) if with_logmel else None)


def _check_audio(manifest: Manifest):
    missing = [str(manifest.path(c)) for c in manifest.clips if not manifest.path(c).is_file()]
    if missing:
        raise DataError(f"missing audio file(s): {', '.join(missing)}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def train_bundle(manifest: Manifest, cfg: PipelineConfig, train_log=None) -> Bundle:
    """Train RBM, the cRBM array, per-cRBM PCAs and (optionally) the classifier."""
    if not manifest.clips:
        raise DataError("cannot train on an empty manifest")
    _check_audio(manifest)
    emit = train_log if train_log is not None else (lambda line: None)
    workers = cfg.workers()
    want_classifier = cfg.train_classifier and bool(manifest.class_names)
    feats = _map(lambda c: clip_features(manifest.path(c), want_classifier), manifest.clips, workers)
    for clip, f in zip(manifest.clips, feats):
        for ev in clip.strong_events or ():
            if ev.offset_s > f.duration_s + 1e-3:
                log.warning("%s: strong event ends at %.3f s after clip end %.3f s",
                            clip.filename, ev.offset_s, f.duration_s)

    stacked = [stack_frames(f.spectrogram, cfg.stack_frames) for f in feats]
    x = np.concatenate(stacked)
    mean, std = standardize_fit(x)
    log.info("training RBM on %d frames (%d -> %d)", len(x), x.shape[1], cfg.rbm_hidden)
    rbm = rbm_train((x - mean) / std, cfg.train_config(cfg.rbm_epochs), cfg.rbm_hidden, mean, std,
                    on_epoch=lambda e, err: emit(f"rbm epoch={e} recon_error={err:.6f}"))

    hidden = [rbm_transform(rbm, rbm.standardize(s)) for s in stacked]
    h_mean, h_std = standardize_fit(np.concatenate(hidden))
    h_std_clips = [(h - h_mean) / h_std for h in hidden]
    def train_crbm(item):
        # Each cRBM owns its RNG and log buffer, so the array trains in parallel.
        i, n = item
        usable = [h for h in h_std_clips if h.shape[0] > n]
        if not usable:
            raise DataError(f"no clip is longer than the {n}-frame cRBM context")
        log.info("training cRBM context=%d on %d clips", n, len(usable))
        lines = []
        model = crbm_train(usable, n, cfg.train_config(cfg.crbm_epochs, seed_offset=i + 1),
                           cfg.crbm_hidden, h_mean, h_std,
                           on_epoch=lambda e, err: lines.append(
                               f"crbm context={n} epoch={e} recon_error={err:.6f}"))
        return model, lines

    crbms = []
    for model, lines in _map(train_crbm, enumerate(cfg.contexts), workers):
        crbms.append(model)
        for line in lines:
            emit(line)

    acts = [transform_sequence(rbm, crbms, f.spectrogram, cfg.stack_frames) for f in feats]
    energy = np.concatenate([f.spectrogram.values.sum(axis=1) for f in feats])
    pcas = []
    for i in range(len(crbms)):
        a = np.concatenate([clip_acts[i] for clip_acts in acts])
        pca = fit_pca(a, cfg.pca_dims)
        if pca.rank_deficient:
            log.warning("PCA for context %d is rank deficient", cfg.contexts[i])
        pcas.append(orient_to_energy(pca, a, energy) if cfg.orient_pca else pca)

    classifier = None
    if want_classifier:
        names = manifest.class_names
        data = [(classifier_features(f.logmel, cfg.classifier_context), clip.weak_labels)
                for clip, f in zip(manifest.clips, feats)]
        log.info("training frame classifier for %d classes", len(names))
        classifier = train_frame_classifier(
            data, names, cfg.classifier_config(),
            on_epoch=lambda e, loss: emit(f"classifier epoch={e} loss={loss:.6f}"))
    elif cfg.train_classifier:
        log.warning("manifest has no labels; skipping the frame classifier")
    return Bundle(cfg, rbm, crbms, pcas, classifier)


def save_bundle(bundle: Bundle, out_dir, train_log_lines=()):
    """Write the bundle atomically: into a temporary sibling, then rename."""
    out_dir = Path(out_dir)
    tmp = out_dir.parent / f".{out_dir.name}.tmp{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        save_model(tmp / "rbm.model", bundle.rbm)
        for c, p in zip(bundle.crbms, bundle.pcas):
            save_model(tmp / f"crbm_{c.context_frames}.model", c)
            save_model(tmp / f"pca_{c.context_frames}.model", p, context=c.context_frames)
        if bundle.classifier is not None:
            save_model(tmp / "classifier.model", bundle.classifier)
        (tmp / CONFIG_FILE).write_text(bundle.config.dumps())
        (tmp / LOG_FILE).write_text("".join(line + "\n" for line in train_log_lines))
        if out_dir.exists():
            shutil.rmtree(out_dir)
        tmp.rename(out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def cmd_train(manifest: Manifest, cfg: PipelineConfig, out_dir) -> Bundle:
    lines = []
    try:
        bundle = train_bundle(manifest, cfg, lines.append)
    finally:
        for line in lines[-3:]:
            log.debug(line)
    save_bundle(bundle, out_dir, lines)
    log.info("wrote model bundle to %s", out_dir)
    return bundle


def load_bundle(bundle_dir) -> Bundle:
    bundle_dir = Path(bundle_dir)
    cfg_path = bundle_dir / CONFIG_FILE
    if not cfg_path.is_file():
        raise DataError(f"{bundle_dir}: not a model bundle (no {CONFIG_FILE})")
    cfg = PipelineConfig.load(cfg_path)
    rbm, _ = load_model(bundle_dir / "rbm.model")
    crbms, pcas = [], []
    for n in cfg.contexts:
        c, _ = load_model(bundle_dir / f"crbm_{n}.model")
        p, ctx = load_model(bundle_dir / f"pca_{n}.model")
        if c.context_frames != n or ctx != n:
            raise DataError(f"{bundle_dir}: context mismatch for the {n}-frame cRBM")
        crbms.append(c)
        pcas.append(p)
    classifier = None
    if (bundle_dir / "classifier.model").is_file():
        classifier, _ = load_model(bundle_dir / "classifier.model")
    bundle = Bundle(cfg, rbm, crbms, pcas, classifier)
    check_bundle(bundle)
    return bundle


def check_bundle(b: Bundle):
    cfg = b.config
    from hybridsed.audio import AUDITORY_CHANNELS, MEL_BANDS

    if b.rbm.visible_dim != AUDITORY_CHANNELS * cfg.stack_frames:
        raise DataError(f"RBM visible_dim {b.rbm.visible_dim} != "
                        f"{AUDITORY_CHANNELS} x {cfg.stack_frames} stacked frames")
    for c, p in zip(b.crbms, b.pcas):
        if c.visible_dim != b.rbm.hidden_dim:
            raise DataError(f"cRBM {c.context_frames}: visible_dim {c.visible_dim} != "
                            f"RBM hidden_dim {b.rbm.hidden_dim}")
        if p.input_dim != c.hidden_dim:
            raise DataError(f"PCA {c.context_frames}: input_dim {p.input_dim} != "
                            f"cRBM hidden_dim {c.hidden_dim}")
    if b.classifier is not None:
        expected = MEL_BANDS * (2 * b.classifier.context + 1)
        if b.classifier.n_features != expected:
            raise DataError(f"classifier expects {b.classifier.n_features} features, "
                            f"log-mel context gives {expected}")


# ---------------------------------------------------------------------------
# detect / label
# ---------------------------------------------------------------------------

def detect_clip(bundle: Bundle, path):
    f = clip_features(path)
    return detect_boundaries(f.spectrogram, f.energy, bundle.rbm, bundle.crbms, bundle.pcas,
                             bundle.config.boundary_config(), clip_end_s=f.duration_s)


def cmd_detect(manifest: Manifest, bundle: Bundle, out_tsv, jobs: int | None = None):
    """Write ``filename<TAB>onset<TAB>offset`` for every detected boundary."""
    _check_audio(manifest)
    workers = jobs or bundle.config.workers()
    results = _map(lambda c: detect_clip(bundle, manifest.path(c)), manifest.clips, workers)
    lines = []
    out = {}
    for clip, bounds in zip(manifest.clips, results):
        out[clip.filename] = bounds
        lines.extend(format_event_rows(clip.filename, bounds, with_label=False))
        log.info("%s: %d boundaries", clip.filename, len(bounds))
    Path(out_tsv).write_text("".join(line + "\n" for line in lines))
    return out


def _posterior_path(directory, filename):
    return Path(directory) / (Path(filename).stem + ".csv")


def cmd_label(boundaries_tsv, out_tsv, posterior_dirs=(), bundle: Bundle | None = None,
              audio_dir=None, jobs: int | None = None):
    """Label boundaries from posterior CSV directories or the bundle classifier.

    With several posterior directories each one labels every boundary and the
    labels are combined by majority vote.
    """
    posterior_dirs = list(posterior_dirs)
    if not posterior_dirs and (bundle is None or bundle.classifier is None):
        raise DataError("need posterior directories or a bundle with a trained classifier")
    if not posterior_dirs and audio_dir is None:
        raise DataError("classifier labeling needs the audio directory")
    boundaries = read_event_tsv(boundaries_tsv, require_label=False)

    def sources_for(name) -> list:
        if posterior_dirs:
            out = []
            for d in posterior_dirs:
                path = _posterior_path(d, name)
                if not path.is_file():
                    raise DataError(f"missing posterior file {path}")
                out.append(load_posteriors(path))
            return out
        w = load_audio(Path(audio_dir) / name)
        return [predict_posteriors(bundle.classifier, log_mel_energy(w))]

    def label_clip(item):
        name, bounds = item
        if not bounds:
            return name, [], 0
        labeled = []
        dropped = 0
        for post in sources_for(name):
            events, n = label_boundaries(post, bounds)
            labeled.append({(e.onset_s, e.offset_s): e for e in events})
            dropped = max(dropped, n)
        events = []
        for b in bounds:
            votes = [m[(b.onset_s, b.offset_s)] for m in labeled if (b.onset_s, b.offset_s) in m]
            if votes:
                events.append(votes[0] if len(votes) == 1 else majority_vote(votes))
        return name, events, dropped

    workers = jobs or (bundle.config.workers() if bundle is not None else 1)
    results = _map(label_clip, boundaries.items(), workers)
    lines, out, total_dropped = [], {}, 0
    for name, events, dropped in results:
        out[name] = events
        total_dropped += dropped
        lines.extend(format_event_rows(name, events))
    if total_dropped:
        log.info("dropped %d event(s) covering no posterior frame", total_dropped)
    Path(out_tsv).write_text("".join(line + "\n" for line in lines))
    return out


# ---------------------------------------------------------------------------
# evaluate / synth
# ---------------------------------------------------------------------------

def cmd_evaluate(ref_tsv, pred_tsv, modes=("full",), cfg: PipelineConfig | None = None,
                 out_path=None) -> str:
    """Score a prediction file; returns (and optionally writes) the report text."""
    cfg = cfg or PipelineConfig()
    refs = read_event_tsv(ref_tsv)
    preds = read_event_tsv(pred_tsv)
    vocab = sorted({e.class_name for evs in refs.values() for e in evs})
    blocks = []
    for mode in modes:
        if mode not in MODES:
            raise DataError(f"unknown evaluation mode {mode!r}")
        report = score(refs, preds, cfg.match_config(mode), vocabulary=vocab, strict=False)
        blocks.append(format_report(report, f"Event-based metrics ({mode})"))
        blocks.append(report_key_values(report, prefix=f"{mode}."))
    text = "\n\n".join(blocks) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text)
    return text


def cmd_synth(spec: SynthSpec, out_dir):
    strong = write_scene_set(spec, out_dir)
    log.info("wrote %d scenes with %d events to %s", len(strong),
             sum(len(v) for v in strong.values()), out_dir)
    return strong


def labels_from_posteriors(p: PosteriorMatrix, boundaries):
    """Convenience wrapper used by tests and notebooks."""
    return label_boundaries(p, boundaries)[0]
