import numpy as np
import pytest

from lte.decoder import DecoderConfig
from lte.encoder import EncoderConfig
from lte.model import ModelConfig

# criterion number -> (passed, detail); filled by test_acceptance and printed at the end
ACCEPTANCE = {}


def tiny_config(dim=8, knn=4, blocks=1, heads=2, patch=8, kappa=4, dec_blocks=1, head="irradiance",
                target="irradiance", seed=0):
    return ModelConfig(
        EncoderConfig(dim=dim, knn=knn, blocks=blocks, heads=heads, patch=patch),
        DecoderConfig(dim=dim, kappa=kappa, blocks=dec_blocks, pe_hidden=8, head=head, head_hidden=8),
        seed=seed, target=target,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
