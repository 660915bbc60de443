import json

import pandas as pd
import pytest

from hjmcal import dataio
from hjmcal.cli import build_parser, main


@pytest.fixture
def bundle_path(tmp_path, deterministic_bundle):
    path = tmp_path / "bundle.json"
    dataio.save_bundle(path, deterministic_bundle)
    return str(path)


def _dirs(tmp_path) -> list[str]:
    return ["--data-dir", str(tmp_path / "data"), "--output-dir", str(tmp_path / "out")]


class TestConfiguration:
    def test_set_without_value(self, tmp_path, bundle_path):
        assert main(["price", "--bundle", bundle_path, "--set", "foo", *_dirs(tmp_path)]) == 2

    def test_out_of_range_setting(self, tmp_path, bundle_path):
        assert main(["price", "--bundle", bundle_path, "--set", "step1.lambda=2", *_dirs(tmp_path)]) == 2

    def test_bundle_or_fixture_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["price"])

    def test_missing_bundle(self, tmp_path):
        assert main(["price", "--bundle", str(tmp_path / "nope.json"), *_dirs(tmp_path)]) != 0


class TestModelCommands:
    def test_price(self, tmp_path, bundle_path):
        out = tmp_path / "prices.csv"
        code = main(["price", "--bundle", bundle_path, "--strikes", "90,100,110", "--out", str(out), *_dirs(tmp_path)])
        assert code == 0
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["strike", "call", "put", "iv", "vs_vol"]
        assert frame["strike"].tolist() == [90.0, 100.0, 110.0]
        assert frame["iv"].tolist() == pytest.approx([0.3] * 3, abs=1e-6)
        assert frame["vs_vol"].tolist() == pytest.approx([0.3] * 3)
        assert (frame["call"] - frame["put"]).tolist() == pytest.approx([10.0, 0.0, -10.0])

    def test_simulate(self, tmp_path, bundle_path):
        out = tmp_path / "sim.csv"
        code = main(["simulate", "--bundle", bundle_path, "--window", "0.25,0.5", "--window", "0.5,0.75",
                     "--horizon", "0.1", "--paths", "400", "--out", str(out), *_dirs(tmp_path)])
        assert code == 0
        frame = pd.read_csv(out)
        assert frame["contract"].tolist() == ["C1", "C2"]
        assert (frame["terminal_mean"] - 100.0).abs().max() < 4.0
        assert (frame["min_variance"] >= 0).all()

    @pytest.mark.slow
    def test_synth(self, tmp_path, capsys):
        out = tmp_path / "market"
        assert main(["synth", "--out", str(out), "--history-days", "5", *_dirs(tmp_path)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["dates"] == 5
        assert doc["smiles"] > 0
        assert (out / "quotes.csv").exists() and (out / "truth.json").exists()
