import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

SMALL_TASKS = ["push_red_block_left", "turn_on_led", "lift_pink_block", "close_drawer"]


@pytest.fixture(scope="session")
def small_dataset():
    from maskseek.simenv import generate_demos
    return generate_demos(per_task=2, seed=0)


@pytest.fixture(scope="session")
def small_dataset_file(small_dataset, tmp_path_factory):
    from maskseek.store import save_dataset
    path = tmp_path_factory.mktemp("data") / "small.msk"
    save_dataset(small_dataset, path)
    return path
