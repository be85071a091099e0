import pytest
import torch

from ovlw_detr.config import ModelConfig
from ovlw_detr.detector import OVLWDETR
from ovlw_detr.text_embedding import VocabularySpec, encode_vocabulary, make_encoder

_ACCEPTANCE = []


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    return ModelConfig.desk("S", image_size=32, window_size=2, num_queries=6, eval_queries=6,
                            num_groups=3, encoder_dim=32, encoder_layers=2, encoder_heads=2,
                            global_attention_layer_indices=(1,), decoder_dim=32, decoder_heads=2,
                            decoder_ffn_dim=64, decoder_layers=2, text_dim=32)


@pytest.fixture
def tiny_model(tiny_cfg):
    torch.manual_seed(0)
    model = OVLWDETR(tiny_cfg)
    # non-trivial box heads so boxes depend on the queries
    with torch.no_grad():
        for mlp in (model.enc_bbox, model.bbox_embed):
            mlp.layers[-1].weight.normal_(0, 0.05)
    return model


@pytest.fixture
def toy_table():
    names = ("red circle", "blue square", "green triangle", "red square", "blue circle")
    return encode_vocabulary(VocabularySpec(names), make_encoder("toy", dim=32), "toy")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.module.__name__.endswith("test_acceptance") and report.when == "call":
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        if hasattr(item, "callspec"):
            doc += f" [{item.callspec.id}]"
        _ACCEPTANCE.append((doc, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for doc, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {doc}")
