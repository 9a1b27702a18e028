import numpy as np
import pytest

from fednilm.data import ClientDataset, split_dataset
from fednilm.nn import NetworkSpec

TOY_SPEC = NetworkSpec(window_len=24, appliance_count=2, encoder_channels=(2, 2),
                       encoder_downsample=2, pooling_bins=(1, 2, 3, 6), dropout_p=0.1,
                       decoder_channels=2)

SMALL_SPEC = NetworkSpec(window_len=24, appliance_count=2, encoder_channels=(4, 8),
                         encoder_downsample=2, pooling_bins=(1, 2, 3, 6), dropout_p=0.1,
                         decoder_channels=4)


def random_dataset(client_id, K=40, spec=SMALL_SPEC, seed=0):
    """Windows whose states are a learnable function of the input."""
    rng = np.random.default_rng([seed, client_id])
    X = rng.standard_normal((K, spec.window_len)) * 0.5
    Y = np.stack([(X > 0.2), (X < -0.4)], axis=1)[:, :spec.appliance_count].astype(np.int8)
    tr, va, te = split_dataset(K)
    return ClientDataset(client_id, X, Y, tr, va, te, 0.0,
                         tuple(f"app{i}" for i in range(spec.appliance_count)))


@pytest.fixture
def toy_spec():
    return TOY_SPEC


@pytest.fixture
def small_spec():
    return SMALL_SPEC


# (sort key, line) per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
