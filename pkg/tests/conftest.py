import numpy as np
import pytest

from hierseg import bundled_tree, parse_hierarchy, validate_cut
from hierseg.synthdata import default_appearance, generate_dataset, load_dataset

SMALL_TREE = """
{"name": "root", "children": [
  {"name": "K", "children": [{"name": "a"}, {"name": "b"}]},
  {"name": "c"}
]}
"""

SUPER_CUT = ["epithelial", "inflammatory", "connective", "dead"]


@pytest.fixture(scope="session")
def small_tree():
    return parse_hierarchy(SMALL_TREE)


@pytest.fixture(scope="session")
def nucleus():
    return bundled_tree()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory, nucleus):
    """Two 12-image datasets (super-class cut and leaf cut) for fast pipeline tests."""
    root = tmp_path_factory.mktemp("tiny")
    appearance = default_appearance(nucleus)
    out = {}
    for name, cut, seed in (("A", SUPER_CUT, 11), ("B", nucleus.leaf_names, 12)):
        generate_dataset(nucleus, validate_cut(nucleus, cut), appearance, seed, 12, 64,
                         root / name, name=name)
        out[name] = load_dataset(root / name)
    return out


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
