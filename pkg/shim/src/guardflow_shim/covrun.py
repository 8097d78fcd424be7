"""In-sandbox coverage runner.

Invoked as ``python -m guardflow_shim.covrun IMPL TESTS OUT_JSON`` from the
harness's temp directory. Installs the tracer, runs the test file under
pytest in this process, and writes the measured fractions as JSON. The
exit code is pytest's, so the harness maps verdicts exactly as for a
plain test run.
"""

from __future__ import annotations

import json
import os
import sys

from .covtrace import CoverageTracer, measure


def main(argv) -> int:
    impl_path, test_path, out_path = argv
    source = open(impl_path, "r", encoding="utf-8").read()
    tracer = CoverageTracer(os.path.abspath(impl_path))
    import pytest

    tracer.install()
    try:
        rc = pytest.main(
            [test_path, "-q", "--junit-xml", ".report.xml", "-p", "no:cacheprovider"]
        )
    finally:
        tracer.uninstall()
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(measure(source, tracer), fh)
    return int(rc)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
