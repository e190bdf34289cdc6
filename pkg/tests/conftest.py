import numpy as np
import pytest

from gfsl.dataset import PathologyVocab
from gfsl.episodes import EpisodeSampler
from gfsl.partition import build_class_partition, build_example_pools
from gfsl.synth import SynthConfig, make_synthetic

# per-class, per-source label counts of the public chest X-ray meta-dataset
CXR_CLASSES = [
    "Effusion", "Lung opacity", "Atelectasis", "Infiltration", "Nodule", "Mass", "Pleural thickening",
    "Emphysema", "Fibrosis", "Hernia",
    "Cardiomegaly", "Edema", "Pneumothorax", "Consolidation", "Pneumonia",
]
CXR_COUNTS = {
    "CheXpert": [66484, 77194, 25980, 0, 0, 0, 0, 0, 0, 0, 20391, 41247, 14977, 10340, 2986],
    "MIMIC": [43544, 42779, 38297, 0, 0, 0, 0, 0, 0, 0, 36512, 21894, 9215, 9183, 13679],
    "ChestX-ray14": [13086, 0, 11335, 19362, 6238, 5682, 3326, 2484, 1650, 197, 2701, 2269, 5220, 4505, 1381],
    "PadChest": [5075, 0, 4808, 10455, 3429, 738, 2691, 939, 489, 1034, 6782, 865, 306, 1197, 3548],
}
CXR_TOTALS = [128189, 119973, 80420, 29817, 9667, 6420, 6017, 3423, 2139, 1231,
                 66386, 66275, 29718, 25225, 21594]
CXR_TST = {"Cardiomegaly", "Edema", "Pneumothorax", "Consolidation", "Pneumonia"}
CXR_VAL = {"Emphysema", "Fibrosis", "Hernia"}
CXR_TRN = set(CXR_CLASSES[:7])


@pytest.fixture(scope="session")
def cxr_vocab():
    return PathologyVocab(CXR_CLASSES)


SMALL_SYNTH = SynthConfig(trn_count=200, val_count=80, tst_count=100, n_notfinding=200, colabel_prob=0.3)


@pytest.fixture(scope="session")
def small_world():
    """Synthetic dataset + partition + pools + sampler, small enough for fuzzing."""
    ds = make_synthetic(SMALL_SYNTH, seed=7)
    cp = build_class_partition(ds)
    pools = build_example_pools(ds, cp, seed=7)
    return ds, cp, pools, EpisodeSampler(ds, cp, pools)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (PASS/FAIL, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {detail}")
