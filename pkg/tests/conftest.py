import json
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from scbg import cli
from scbg.core import DatasetSplit, load_dataset
from scbg.courtesy import LabeledSample, load_labels
from scbg.courtesy_range import RangeModel
from scbg.generator import GeneratorModel
from scbg.predictor import PredictorModel


@dataclass
class Run:
    out: Path
    seconds: float
    split: DatasetSplit
    predictor: PredictorModel
    generator: GeneratorModel
    range_model: RangeModel
    train_labels: list[LabeledSample]
    val_labels: list[LabeledSample]
    report: dict

    def variant(self, name: str) -> dict:
        return next(r for r in self.report["reports"] if r["name"] == name)


@pytest.fixture(scope="session")
def trained(tmp_path_factory) -> Run:
    """The default pipeline (1000 train / 500 validation scenarios), run once per session."""
    out = tmp_path_factory.mktemp("pipeline")
    start = time.perf_counter()
    assert cli.main(["pipeline", "--out", str(out)]) == 0
    seconds = time.perf_counter() - start
    return Run(
        out=out,
        seconds=seconds,
        split=load_dataset(out / "data"),
        predictor=PredictorModel.load(out / "predictor.json"),
        generator=GeneratorModel.load(out / "scbg.json"),
        range_model=RangeModel.load(out / "range.json"),
        train_labels=load_labels(out / "labels_train.jsonl"),
        val_labels=load_labels(out / "labels_validation.jsonl"),
        report=json.loads((out / "report.json").read_text()),
    )
