import pytest

from ascluster.ingest import SyntheticSpec, generate_synthetic

# acceptance lines collected by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bundle():
    """Default synthetic bundle: (numeric, text, labels, constraints)."""
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory, bundle):
    from ascluster.cli import write_assignments
    from ascluster.ingest import write_constraints, write_numeric_csv, write_term_frequency

    numeric, text, labels, constraints = bundle
    out = tmp_path_factory.mktemp("bundle")
    write_numeric_csv(numeric, out / "numeric.csv")
    write_term_frequency(text, out / "text_counts.csv", out / "lexicon.txt")
    write_constraints(constraints, out / "constraints.json")
    write_assignments(numeric.samples, labels, out / "labels.csv")
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
