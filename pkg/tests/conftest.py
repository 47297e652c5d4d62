import numpy as np
import pytest
from hypothesis import settings

from fedlens.core import FIREWALL_FEATURES, FIREWALL_SCHEMA, ClientDataset
from fedlens.selection import SelectionMatrix

settings.register_profile("fedlens", deadline=None)
settings.load_profile("fedlens")

# Reference per-client analytics: (client, n_samples, n_features, skewness per feature)
REFERENCE_MATRIX = [
    (1, 895, 9, -0.7097, 0.1806, -0.5809, 0.8565, 0.3008, -0.0123, -0.0969, -0.1929, -0.0415),
    (2, 400, 9, -0.7926, 0.1822, -0.4863, 0.9215, 0.3448, 0.0325, -0.0829, -0.1818, -0.0623),
    (3, 100, 9, -1.0135, 0.0411, -0.3778, 1.0952, 0.4609, 0.1288, 0.039, 0.1132, 0.1107),
    (4, 120, 9, -0.6359, 0.0419, -0.6004, 1.0823, 0.2961, -0.1357, -0.1723, -0.0749, -0.216),
    (5, 400, 9, -0.6633, 0.1731, -0.5606, 0.9464, 0.3187, 0.0603, -0.0401, -0.2112, -0.1681),
    (6, 330, 9, -0.7884, 0.1024, -0.5401, 0.786, 0.3227, 0.0534, -0.1275, -0.1296, -0.0588),
    (7, 580, 9, -0.7906, 0.1078, -0.5066, 0.8427, 0.3451, 0.0284, -0.0409, -0.1009, -0.0317),
    (8, 780, 9, -0.715, 0.1878, -0.6041, 0.8647, 0.2915, -0.0274, -0.1168, -0.1914, -0.0407),
    (9, 500, 9, -0.666, 0.2334, -0.6553, 0.8505, 0.2909, -0.0154, -0.0884, -0.0907, -0.074),
    (10, 290, 9, -0.8571, 0.2951, -0.4723, 1.002, 0.4308, -0.1155, -0.0466, -0.2576, -0.0057),
]
REFERENCE_SELECTED = {1, 2, 5, 6, 7, 8, 9}


@pytest.fixture
def reference_matrix() -> SelectionMatrix:
    return SelectionMatrix.from_table(FIREWALL_FEATURES, REFERENCE_MATRIX)


def make_clients(sizes, seed=0, schema=FIREWALL_SCHEMA, offset=0.0):
    rng = np.random.default_rng(seed)
    scales = np.linspace(0.5, 3.0, schema.width)
    return [
        ClientDataset(i + 1, schema, offset + rng.normal(size=(n, schema.width)) * scales)
        for i, n in enumerate(sizes)
    ]


@pytest.fixture
def clients():
    return make_clients([40, 25, 60])


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(LINES):
            terminalreporter.write_line(LINES[number])
