import csv
import io

import numpy as np
import pytest

from dreamprvr import experiments as E
from dreamprvr import model as Mo

from helpers import micro_config


class TestVariants:
    def test_unknown_lists_valid_names(self):
        with pytest.raises(E.UnknownVariant) as err:
            E.resolve_variant("w/o everything")
        for name in E.VARIANTS:
            assert name in str(err.value)

    @pytest.mark.parametrize("alias,name", [("no-registers", "w/o registers"), ("SIM_ONLY", "L_sim only"),
                                            ("w/ AP", "w/ AP"), (" full ", "full")])
    def test_aliases(self, alias, name):
        assert E.resolve_variant(alias) == name

    def test_no_registers_reaches_video_path(self, micro_dataset):
        cfg = E.variant_config(micro_config(), "w/o registers")
        assert not cfg.uses_registers
        params = Mo.init_model(cfg, micro_dataset.d_vid, micro_dataset.d_text)
        corpus = Mo.embed_corpus(params, cfg, micro_dataset.split("test").videos, 0)
        assert all(e.registers is None for e in corpus)

    def test_every_variant_is_a_valid_config(self):
        for name in E.VARIANTS:
            E.variant_config(micro_config(), name).validate()


class TestAblate:
    def test_single_variant_single_row(self, micro_dataset):
        table = E.ablate(micro_config(train__epochs=1), micro_dataset, ["full"])
        assert table.variants() == ["full"] and len(table.rows) == 1
        rows = list(csv.DictReader(io.StringIO(table.to_csv())))
        assert len(rows) == 1 and rows[0]["variant"] == "full"
        assert "full" in table.to_text()

    def test_seeds_and_median(self, micro_dataset):
        table = E.ablate(micro_config(train__epochs=1), micro_dataset, ["full", "sim-only"], seeds=[0, 1, 2])
        assert len(table.rows) == 6
        sums = [r.report.sum_r for r in table.rows if r.variant == "L_sim only"]
        assert table.median_sum_r("L_sim only") == float(np.median(sums))


class TestSweep:
    def test_one_value_one_row(self, micro_dataset):
        rows = E.sweep(micro_config(train__epochs=1), micro_dataset, "registers", [4])
        text = E.sweep_csv(rows)
        lines = list(csv.reader(io.StringIO(text)))
        assert tuple(lines[0]) == E.SWEEP_COLUMNS and len(lines) == 2 and lines[1][0] == "4"

    def test_axis_applies(self, micro_dataset):
        rows = E.sweep(micro_config(train__epochs=1), micro_dataset, "timesteps", [1, 3])
        assert [r.value for r in rows] == [1, 3]
        assert all(r.train_ms_per_epoch > 0 for r in rows)

    @pytest.mark.parametrize("axis,values", [("depth", [2]), ("registers", [0]), ("timesteps", [2.5])])
    def test_bad_arguments(self, micro_dataset, axis, values):
        with pytest.raises(ValueError):
            E.sweep(micro_config(), micro_dataset, axis, values)


class TestPlot:
    def write_csv(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("value,R@1,SumR\n2,1.5,10\n4,2.5,\n")
        return path

    def test_gnuplot_data(self, tmp_path):
        out = E.plot(self.write_csv(tmp_path), tmp_path / "s.dat")
        lines = out.read_text().splitlines()
        assert lines[0] == "# value R@1 SumR"
        assert [float(x) for x in lines[1].split()] == [2, 1.5, 10]
        assert lines[2].split()[-1] == "nan"

    def test_png(self, tmp_path):
        out = E.plot(self.write_csv(tmp_path), tmp_path / "s.png")
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    @pytest.mark.parametrize("body", ["", "a,b\n", "a,b\n1,2\n3\n"])
    def test_malformed(self, tmp_path, body):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        with pytest.raises(ValueError):
            E.read_numeric_csv(path)
