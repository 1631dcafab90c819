import numpy as np
import pytest

from cfex import ClassifierHead, FeatureBundle, ImageRecord


@pytest.fixture
def identity_head():
    return ClassifierHead(weights=np.eye(2, dtype=np.float32),
                          bias=np.zeros(2, dtype=np.float32))


def make_bundle(g_rows, true_labels, inferred_labels, num_classes, spatial=None):
    n = len(g_rows[0])
    images = [
        ImageRecord(true_label=t, inferred_label=i,
                    g=np.asarray(g, dtype=np.float32),
                    source_path=f"img{j}.png",
                    spatial=None if spatial is None else spatial[j])
        for j, (g, t, i) in enumerate(zip(g_rows, true_labels, inferred_labels))
    ]
    return FeatureBundle(n=n, num_classes=num_classes, images=images)


@pytest.fixture
def tiny_bundle():
    return make_bundle(
        g_rows=[[1.0, 2.0, 0.0], [0.5, 0.0, 3.0], [2.0, 0.1, 0.2]],
        true_labels=[0, 1, 0],
        inferred_labels=[0, 1, 1],
        num_classes=2,
    )
