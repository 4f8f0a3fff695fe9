import pytest

from sealread.alphabet import SAMPLE_COUNTS, classification_subset, default_registry
from sealread.synthseal import CorpusConfig, generate_corpus


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def frequent_classes(registry):
    """The 20 bundled-count classes with >= 50 samples (no pseudo-class)."""
    return [c.name for c in classification_subset(registry)][:-1]


@pytest.fixture(scope="session")
def frequent_config(frequent_classes):
    """Generator config drawing only the frequent classes, so every glyph has templates."""
    return CorpusConfig(class_weights={k: v for k, v in SAMPLE_COUNTS.items() if k in frequent_classes})


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory, frequent_config):
    """Eight clean seals on disk."""
    root = tmp_path_factory.mktemp("small_corpus")
    manifest, images = generate_corpus(frequent_config, 8, seed=5, out_dir=root)
    return manifest, images


# --- acceptance bookkeeping ------------------------------------------------

_CRITERIA: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` logs one acceptance verdict and returns ``ok``."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> bool:
        _CRITERIA[n] = (bool(ok), title, detail)
        print(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
