import csv
import io
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from navem_lab.cli import main
from navem_lab.mesh import load_fixture, load_mesh


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_mesh_gen_then_info(tmp_path, capsys):
    path = tmp_path / "m.json"
    code, out, _ = run(["mesh", "gen", "--kind", "quadcc", "--n", 8, "--perturb", 0.2, "--seed", 1, "--out", path],
                       capsys)
    assert code == 0 and out == ""
    first = path.read_text()
    run(["mesh", "gen", "--kind", "quadcc", "--n", 8, "--perturb", 0.2, "--seed", 1, "--out", path], capsys)
    assert path.read_text() == first
    code, out, _ = run(["mesh", "info", path], capsys)
    assert code == 0
    assert "cells: 64" in out and "4_convex" in out and "4_concave" in out
    assert load_mesh(path).n_cells == 64


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"vertices": [[0, 0], [1, 1], [1, 0], [0, 1]], "cells": [[0, 1, 2, 3]],
                               "dirichlet_vertices": [0, 1, 2, 3]}))
    code, out, err = run(["mesh", "info", bad], capsys)
    assert code == 2 and out == "" and "error" in err
    code, _, err = run(["solve", "dar", "--method", "p", "--mesh", "fixture:quadcc_coarse", "--models", tmp_path],
                       capsys)
    assert code == 4 and "missing model" in err
    code, _, _ = run(["solve", "nonlinear", "--method", "fem", "--mesh", "fixture:quadcc_coarse", "--max-iter", 1],
                     capsys)
    assert code == 5
    code, _, _ = run(["solve", "dar"], capsys)
    assert code == 2


def test_solve_rows_are_byte_identical(tmp_path, capsys):
    argv = ["solve", "dar", "--method", "vem", "--mesh", "fixture:voronoi_1", "--no-timings"]
    code, a, _ = run(argv, capsys)
    _, b, _ = run(argv + ["--threads", 2], capsys)
    assert code == 0 and a == b
    (row,) = rows(a)
    assert row["method"] == "vem" and float(row["errgrad"]) > 0 and row["assemble_s"] == "0"
    field = tmp_path / "u.json"
    run(argv + ["--field", field], capsys)
    assert len(json.loads(field.read_text())["values"]) == load_fixture("voronoi_1").n_vertices


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "tri", "n": 3}))
    out = tmp_path / "m.json"
    assert run(["mesh", "gen", "--config", cfg, "--out", out], capsys)[0] == 0
    assert load_mesh(out).n_cells == 18
    # flags win over the file
    assert run(["mesh", "gen", "--config", cfg, "--n", 2, "--out", out], capsys)[0] == 0
    assert load_mesh(out).n_cells == 8
    cfg.write_text(json.dumps({"knd": "tri"}))
    code, _, err = run(["mesh", "gen", "--config", cfg], capsys)
    assert code == 2 and "knd" in err


def test_convergence_outputs(tmp_path, capsys):
    out = tmp_path / "conv"
    argv = ["convergence", "dar", "--methods", "vem,fem,p", "--family", "tri", "--levels", "2,4",
            "--models", tmp_path / "none", "--out", out, "--no-timings"]
    code, _, _ = run(argv, capsys)
    assert code == 0
    table = rows((out / "convergence.csv").read_text())
    assert len(table) == 3 * 2
    assert [r["status"] for r in table if r["method"] == "p"] == ["failed", "failed"]
    ET.fromstring((out / "convergence.svg").read_text())
    first = (out / "convergence.csv").read_text()
    run(argv, capsys)
    assert (out / "convergence.csv").read_text() == first
    code, _, _ = run(["convergence", "dar", "--methods", "p", "--levels", "2", "--models", tmp_path / "none",
                      "--out", out], capsys)
    assert code == 5


def test_train_metrics_and_newton_stats(tmp_path, capsys):
    models = tmp_path / "models"
    train = ["train", "--strategy", "P", "--class", "4_convex", "4_concave", "--count", 2, "--preset", "desk",
             "--layers", 2, "--width", 4, "--adam-epochs", 3, "--qn-epochs", 2, "--out", models, "--no-timings"]
    assert run(train, capsys)[0] == 0
    hist = rows((models / "loss_history.csv").read_text())
    assert {r["class"] for r in hist} == {"4_convex", "4_concave"}
    epochs = [int(r["epoch"]) for r in hist if r["class"] == "4_convex" and r["phase"] == "adam"]
    assert epochs == sorted(epochs) and all(r["wall_s"] == "0" for r in hist)
    first = (models / "P_4_convex.json").read_text()
    run(train, capsys)
    assert (models / "P_4_convex.json").read_text() == first

    code, out, _ = run(["metrics", "--models", models, "--mesh", "fixture:quadcc_coarse"], capsys)
    assert code == 0
    table = rows(out)
    assert {r["class"] for r in table} == {"4_convex", "4_concave", "all"}
    assert all(float(r["eps_q"]) >= 0 for r in table)
    assert run(["metrics", "--models", models, "--mesh", "fixture:quadcc_coarse", "--strategies", "B"],
               capsys)[0] == 4

    conv = tmp_path / "nl"
    code, _, _ = run(["convergence", "nonlinear", "--methods", "vem,p", "--meshes", "fixture:quadcc_coarse",
                      "--models", models, "--out", conv], capsys)
    assert code == 0
    (stat,) = rows((conv / "newton_stats.csv").read_text())
    assert stat["method"] == "p" and np.isfinite(float(stat["r_ATI"])) and float(stat["r_m"]) > 0


def test_dataset_command(tmp_path, capsys):
    out = tmp_path / "d.json"
    assert run(["dataset", "--class", "4_concave", "--count", 4, "--out", out], capsys)[0] == 0
    assert len(json.loads(out.read_text())["cells"]) == 4
    assert run(["dataset", "--class", "5_convex", "--count", 4, "--out", out], capsys)[0] == 2
    assert run(["dataset", "--class", "5_convex", "--from-mesh", "fixture:voronoi_1", "--out", out], capsys)[0] == 0
