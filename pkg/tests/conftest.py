import sys
import pytest

from iogrammar.model import standard_registry
from iogrammar.harness import WorkloadSpec, run_workload


# each test runs on cwd to its temp dir
@pytest.fixture(autouse=True)
def go_to_tmpdir(request):
    # Get the fixture dynamically by its name.
    tmpdir = request.getfixturevalue("tmpdir")
    # ensure local test created packages can be imported
    sys.path.insert(0, str(tmpdir))
    # Chdir only for the duration of the test.
    with tmpdir.as_cwd():
        yield


@pytest.fixture
def registry():
    return standard_registry()


@pytest.fixture
def strided_archive(tmpdir):
    """Archive and oracle of strided_shared with P=2, m=2, chunk=10."""
    spec = WorkloadSpec(kind="strided_shared", p=2, m=2, chunk=10)
    return run_workload(spec, str(tmpdir.join("strided")))
