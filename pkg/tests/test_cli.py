import json
import math
import subprocess
import sys

import pytest

from delayed_binomial import cli
from delayed_binomial.asymptotics import CONVERGENCE_COLUMNS
from delayed_binomial.dp import SURFACE_COLUMNS, dp_price
from delayed_binomial.lattice import MarketParams, PayoffSpec, crr_price
from delayed_binomial.smile import SMILE_COLUMNS


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data), encoding="utf-8")
    return str(path)


def test_price_worked(capsys):
    code, out, _ = run(capsys, "price")
    report = json.loads(out)
    assert code == 0
    assert report["price_dp"] == 5.6 and report["price_direct"] == 5.6
    assert report["max_abs_diff"] <= 1e-12
    assert report["hedge"]["delta_star"] == 0.8


def test_price_no_delay_is_crr(capsys, tmp_path):
    market = {"s0": 40, "u": 1.1, "d": 0.9, "r": 0.01, "n_periods": 8, "delay": 0}
    cfg = write(tmp_path, {"market": market, "payoff": {"kind": "put", "strike": 42}})
    code, out, _ = run(capsys, "price", "--config", cfg)
    expected = crr_price(MarketParams(**market), PayoffSpec.put(42))
    assert code == 0
    assert json.loads(out)["price_dp"] == pytest.approx(expected, rel=1e-11)


def test_precedence(capsys, tmp_path):
    cfg = write(tmp_path, {"market": {"n_periods": 4, "delay": 2}, "payoff": {"kind": "call", "strike": 3}})
    _, from_file, _ = run(capsys, "price", "--config", cfg)
    _, flagged, _ = run(capsys, "price", "--config", cfg, "--n", "5", "--h", "1", "--strike", "5")
    file_price = json.loads(from_file)["price_dp"]
    flag_price = json.loads(flagged)["price_dp"]
    assert file_price == pytest.approx(dp_price(MarketParams(4, 2, 0.5, 0, 4, 2), PayoffSpec.call(3)), rel=1e-11)
    assert flag_price == pytest.approx(dp_price(MarketParams(4, 2, 0.5, 0, 5, 1), PayoffSpec.call(5)), rel=1e-11)


def test_price_surface_csv(capsys, tmp_path):
    out_path = tmp_path / "surface.csv"
    code, _, _ = run(capsys, "price", "--n", "3", "--output", str(out_path))
    lines = out_path.read_text().splitlines()
    assert code == 0
    assert lines[0] == ",".join(SURFACE_COLUMNS)
    assert len(lines) == 1 + 3


def test_malformed_json(capsys, tmp_path):
    code, _, err = run(capsys, "price", "--config", write(tmp_path, "{not json"))
    assert code == 2
    assert "malformed JSON" in err


def test_unknown_key_and_bad_payoff(capsys, tmp_path):
    assert run(capsys, "price", "--config", write(tmp_path, {"markte": {}}))[0] == 2
    bad = write(tmp_path, {"payoff": {"kind": "table", "table": [0, 5, 0]}}, "b.json")
    assert run(capsys, "price", "--config", bad)[0] == 2


def test_price_outside_window(capsys, tmp_path):
    cfg = write(tmp_path, {"market": {"r": 1.0}})
    code, _, err = run(capsys, "price", "--config", cfg)
    assert code == 3
    assert "e^r >= u" in err


def test_verify_all_pass(capsys):
    code, out, _ = run(capsys, "verify")
    report = json.loads(out)
    assert code == 0
    for key in ("feasible", "worst_slack", "price_lp", "price_dp", "arbitrage_found"):
        assert key in report
    assert report["feasible"] and not report["arbitrage_found"]


def test_verify_arbitrage(capsys, tmp_path):
    cfg = write(tmp_path, {"market": {"r": math.log(2.5), "n_periods": 3}})
    code, out, _ = run(capsys, "verify", "--config", cfg)
    assert code == 1
    assert json.loads(out)["arbitrage_found"] is True


def test_verify_cap(capsys):
    assert run(capsys, "verify", "--n", "30")[0] == 3
    assert run(capsys, "verify", "--n", "13")[0] == 3


def test_verify_without_lp(capsys, tmp_path):
    market = {"s0": 40, "u": 1.1, "d": 0.9, "r": 0.0, "n_periods": 14, "delay": 2}
    cfg = write(tmp_path, {"market": market, "payoff": {"kind": "call", "strike": 40}, "lp": False})
    code, out, _ = run(capsys, "verify", "--config", cfg)
    report = json.loads(out)
    assert code == 0
    assert report["price_lp"] is None and report["feasible"]


def test_converge_csv(capsys, tmp_path):
    out_path = tmp_path / "conv.csv"
    code, _, _ = run(capsys, "converge", "--output", str(out_path), "--plot")
    rows = out_path.read_text().splitlines()
    assert code == 0
    assert rows[0] == ",".join(CONVERGENCE_COLUMNS)
    assert [r.split(",")[0] for r in rows[1:]] == ["100", "400", "1600", "6400"]
    res = [abs(float(r.split(",")[4])) for r in rows[1:]]
    assert all(2.5 <= a / b <= 6 for a, b in zip(res, res[1:]))
    assert (tmp_path / "conv.png").stat().st_size > 0


def test_converge_single_and_invalid(capsys, tmp_path):
    code, out, _ = run(capsys, "converge", "--n", "200", "--h", "0")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 2
    assert abs(float(lines[1].split(",")[-1])) <= 0.005 * 40
    cfg = write(tmp_path, {"scaling": {"mu": 0.3}, "n_grid": [5, 100]})
    code, out, err = run(capsys, "converge", "--config", cfg)
    assert code == 0
    assert ",nan," in out.splitlines()[1]
    assert "n=5" in err


def test_converge_monte_carlo_summary(capsys, tmp_path):
    cfg = write(tmp_path, {"n_grid": [200], "mc_paths": 2000, "seed": 3})
    code, _, err = run(capsys, "converge", "--config", cfg)
    summary = json.loads(err)
    assert code == 0
    assert summary["seed"] == 3 and summary["variance"][0]["n"] == 200


def test_smile_default(capsys, tmp_path):
    out_path = tmp_path / "smile.csv"
    code, _, _ = run(capsys, "smile", "--output", str(out_path), "--plot")
    lines = out_path.read_text().splitlines()
    assert code == 0
    assert lines[0] == ",".join(SMILE_COLUMNS)
    assert len(lines) == 42
    assert (tmp_path / "smile.png").exists()


def test_smile_flat_without_delay(capsys):
    code, out, _ = run(capsys, "smile", "--h", "0")
    rows = [line.split(",") for line in out.splitlines()[1:]]
    band = [float(v) for row in rows if 32 <= float(row[0]) <= 48 for v in row[3:5]]
    assert code == 0
    assert len(band) == 2 * 21
    assert max(band) - min(band) <= 0.005


def test_smile_invalid_window(capsys, tmp_path):
    cfg = write(tmp_path, {"scaling": {"mu": 1.5}})
    assert run(capsys, "smile", "--config", cfg)[0] == 3


def test_plot_needs_output(capsys):
    assert run(capsys, "smile", "--plot")[0] == 2


def test_deterministic_output(tmp_path):
    outputs = []
    for i in range(2):
        out = tmp_path / f"s{i}.csv"
        subprocess.run(
            [sys.executable, "-m", "delayed_binomial.cli", "smile", "--output", str(out), "--plot"], check=True
        )
        outputs.append((out.read_bytes(), out.with_suffix(".png").read_bytes()))
    assert outputs[0] == outputs[1]


def test_json_uses_twelve_digits():
    assert cli.dumps({"x": 1 / 3, "y": [2 / 3], "z": float("nan")}) == (
        '{\n  "x": 0.333333333333,\n  "y": [\n    0.666666666667\n  ],\n  "z": null\n}\n'
    )


def test_console_script():
    result = subprocess.run(["delayed-binomial", "price"], capture_output=True, text=True)
    assert result.returncode == 0
    assert json.loads(result.stdout)["price_dp"] == 5.6
