import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybridsed.config import PipelineConfig  # noqa: E402
from hybridsed.manifest import parse_manifest  # noqa: E402
from hybridsed.pipeline import save_bundle, train_bundle  # noqa: E402
from hybridsed.synth import SynthSpec, write_scene_set  # noqa: E402

TINY = dict(rbm_hidden=32, crbm_hidden=16, rbm_epochs=3, crbm_epochs=2,
            classifier_epochs=150, seed=7, jobs=1)


def tiny_config(**extra):
    return PipelineConfig().with_overrides({**TINY, **extra})


@pytest.fixture(scope="session")
def burst_scenes(tmp_path_factory):
    """Eight 8 s clips, each with three tone bursts over a pink-noise bed."""
    out = tmp_path_factory.mktemp("bursts")
    spec = SynthSpec(n_clips=8, duration_s=8.0, n_classes=1, events_per_clip=3, seed=3)
    write_scene_set(spec, out)
    return out


@pytest.fixture(scope="session")
def mixed_scenes(tmp_path_factory):
    """Ten 5 s clips over three classes (training set for the bundle tests)."""
    out = tmp_path_factory.mktemp("mixed")
    spec = SynthSpec(n_clips=10, duration_s=5.0, n_classes=3, events_per_clip=2, seed=11)
    write_scene_set(spec, out)
    return out


@pytest.fixture(scope="session")
def burst_bundle(burst_scenes):
    manifest = parse_manifest(burst_scenes / "weak.tsv", burst_scenes / "strong.tsv")
    return train_bundle(manifest, tiny_config(train_classifier=False))


@pytest.fixture(scope="session")
def mixed_bundle_dir(mixed_scenes, tmp_path_factory):
    manifest = parse_manifest(mixed_scenes / "weak.tsv", mixed_scenes / "strong.tsv")
    lines = []
    bundle = train_bundle(manifest, tiny_config(), lines.append)
    out = tmp_path_factory.mktemp("bundle") / "model"
    save_bundle(bundle, out, lines)
    return out


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
