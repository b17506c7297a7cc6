import numpy as np
import pytest

from disagreenet import EnsembleTrace


def trace_from_correctness(correct):
    """Build a labeled 2-class trace whose correctness tensor equals `correct`."""
    correct = np.asarray(correct, dtype=np.uint8)
    labels = np.zeros(correct.shape[2], dtype=np.int64)
    predicted = np.where(correct, 0, 1).astype(np.int32)
    return EnsembleTrace(predicted=predicted, num_classes=2, labels=labels)


def trace_from_logits(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    return EnsembleTrace(
        predicted=logits.argmax(axis=-1).astype(np.int32),
        num_classes=logits.shape[-1],
        labels=np.asarray(labels, dtype=np.int64),
        logits=logits,
    )


def random_logits_trace(rng, e, n, m, c):
    logits = rng.normal(size=(e, n, m, c))
    labels = rng.integers(0, c, size=m)
    return trace_from_logits(logits, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
