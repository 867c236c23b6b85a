import numpy as np
import pytest

from dgflow.chem import QM9_ALPHABET
from dgflow.flow import DiscreteFlowModel, FlowConfig
from dgflow.graphs import generic_alphabet


def rel_error(a: np.ndarray, b: np.ndarray, zero_scale: float = 1e-7) -> float:
    """Norm-relative difference; values that are both numerically zero match."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < zero_scale:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def tiny_qm9_model(seed: int = 0, d: int = 2, layers: int = 1, width: int = 4,
                   tau: float = 1.0, random_priors: bool = True) -> DiscreteFlowModel:
    cfg = FlowConfig(num_shift_layers=d, rgcn_layers=layers, embed_dim=width,
                     mlp_hidden=width, tau=tau)
    model = DiscreteFlowModel(QM9_ALPHABET, cfg, seed=seed)
    if random_priors:
        rng = np.random.default_rng(seed + 1000)
        model.store.params["prior.alpha"].value = rng.normal(size=4)
        model.store.params["prior.beta"].value = rng.normal(size=4)
    return model


def tiny_generic_model(k: int = 2, c: int = 1, seed: int = 0, d: int = 2,
                       width: int = 6) -> DiscreteFlowModel:
    cfg = FlowConfig(num_shift_layers=d, rgcn_layers=2, embed_dim=width, mlp_hidden=width)
    return DiscreteFlowModel(generic_alphabet(k, c), cfg, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
