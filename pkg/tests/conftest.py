import numpy as np
import pytest

from pcx.cli import BUNDLED_MODEL
from pcx.cluster import KMeansConfig, kmeans
from pcx.model import ClassifierHandle, SHAPES, SyntheticShapeSpec, from_params, load_model, synth_dataset
from pcx.pointcloud import PointCloud


@pytest.fixture(scope="session")
def bundled_params():
    return load_model(BUNDLED_MODEL)


@pytest.fixture(scope="session")
def bundled(bundled_params):
    return from_params(bundled_params)


@pytest.fixture(scope="session")
def shapes_small():
    """One 1024-point instance per shape class, unseen by the bundled model."""
    return synth_dataset(SHAPES, 1, SyntheticShapeSpec(points=1024, jitter=0.02, seed=777))


def retained_clusters(points, index, n_clusters):
    """Which clusters survive unchanged in ``points`` (exact row lookup)."""
    counts = np.zeros(n_clusters, dtype=np.int64)
    for row in np.asarray(points):
        k = index.get(row.tobytes())
        if k is not None:
            counts[k] += 1
    return counts


class MaskGame:
    """Classifier stub whose logit is a function of which clusters are intact.

    Works for every flip mode: flipped points either vanish or move off their
    original coordinates, so exact row lookup recovers the mask.
    """

    def __init__(self, pc, ca, value_fn, n_classes=2, target=0):
        self.points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
        self.ca = ca
        self.sizes = np.bincount(ca.assignment, minlength=ca.n_clusters)
        self.index = {p.tobytes(): int(k) for p, k in zip(self.points, ca.assignment)}
        self.value_fn = value_fn
        self.n_classes = n_classes
        self.target = target

    def mask_of(self, cloud):
        return (retained_clusters(cloud, self.index, self.ca.n_clusters) == self.sizes).astype(np.int8)

    def predict(self, clouds):
        out = np.zeros((len(clouds), self.n_classes))
        for i, c in enumerate(clouds):
            out[i, self.target] = self.value_fn(self.mask_of(c))
        return out

    def handle(self):
        return ClassifierHandle(self.predict, [str(k) for k in range(self.n_classes)])


def make_cloud(n=64, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(n, 3)))


def make_clustered(n=64, n_clusters=4, seed=0):
    pc = make_cloud(n, seed)
    return pc, kmeans(pc, KMeansConfig(n_clusters=n_clusters, seed=seed))


# one line per acceptance criterion, repeated at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def make_balanced(n_clusters, per_cluster=4, seed=0):
    """Random cloud with a round-robin partition: every cluster has ``per_cluster`` distinct points.

    With at least two distinct points per cluster, every flip mode moves or
    removes every point of a flipped cluster, so MaskGame always sees the flip.
    """
    from pcx.cluster import ClusterAssignment

    n = n_clusters * per_cluster
    pc = make_cloud(n, seed)
    assignment = np.arange(n) % n_clusters
    centers = np.stack([pc.points[assignment == k].mean(axis=0) for k in range(n_clusters)])
    return pc, ClusterAssignment(assignment, n_clusters, centers, 0.0)
