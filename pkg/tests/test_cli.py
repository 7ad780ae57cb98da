import json

import pytest

from brownlab import io, report
from brownlab.cli import main


def test_verify_trivial(tmp_path, capsys):
    assert main(["verify", "--suite", "trivial", "--seed", "7", "--out-dir", str(tmp_path)]) == 0
    hdr, rows = report.read_csv(tmp_path / "verify_trivial.csv")
    assert rows and all(r[hdr.index("passed")] == "1" for r in rows)
    assert (tmp_path / "verify.manifest.json").exists()


def test_sample_tree_is_deterministic(tmp_path):
    digests = []
    for name in ("a.tree", "b.tree"):
        out = tmp_path / name
        assert main(["sample-tree", "--K", "5", "--depth", "4", "--seed", "7",
                     "--out", str(out)]) == 0
        digests.append(io.sha256_file(out))
        man = json.loads((tmp_path / f"{name}.manifest.json").read_text())
        assert man["outputs"][name] == digests[-1]
        assert man["seed"] == 7 and man["params"]["K"] == 5
    assert digests[0] == digests[1]


def test_usage_errors(tmp_path, capsys):
    assert main(["sample-tree", "--bogus", "1"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["sample-tree", "--out", str(tmp_path / "t")]) == 2
    assert main(["verify", "--seed", "1", "--threads", "0", "--out-dir", str(tmp_path)]) == 2
    assert main([]) == 2


def test_corrupt_tree_exit_one(tmp_path):
    t = tmp_path / "t.tree"
    assert main(["sample-tree", "--K", "3", "--depth", "3", "--seed", "1", "--out", str(t)]) == 0
    data = bytearray(t.read_bytes())
    data[-22 - 1] ^= 0xFF
    t.write_bytes(bytes(data[:-3]))
    assert main(["classify", "--tree", str(t), "--out-dir", str(tmp_path)]) == 1


def test_classify(tmp_path):
    t = tmp_path / "t.tree"
    main(["sample-tree", "--K", "5", "--depth", "3", "--seed", "3", "--out", str(t)])
    assert main(["classify", "--tree", str(t), "--n-max", "2", "--out-dir", str(tmp_path)]) == 0
    hdr, rows = report.read_csv(tmp_path / "labels.csv")
    assert hdr == ["depth", "n", "fraction"]
    assert all(0 <= float(r[2]) <= 1 for r in rows)


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("K = 3\ndepth = 2\n# comment\nseed = 4\n")
    out = tmp_path / "t.tree"
    assert main(["sample-tree", "--config", str(cfg), "--depth", "3", "--out", str(out)]) == 0
    tree = io.load_tree(out)
    assert tree.K == 3 and tree.max_depth == 3
    (tmp_path / "bad.cfg").write_text("nonsense_key = 1\n")
    assert main(["sample-tree", "--config", str(tmp_path / "bad.cfg"), "--out", str(out)]) == 2


def test_family_field_pipeline(tmp_path):
    fam = tmp_path / "fam.npz"
    fld = tmp_path / "field.json"
    assert main(["select-family", "--depth", "3", "--seed", "5", "--out", str(fam)]) == 0
    assert main(["build-field", "--family", str(fam), "--out", str(fld)]) == 0
    assert main(["sobolev", "--field", str(fld), "--p", "1", "--n-max", "2",
                 "--out-dir", str(tmp_path)]) == 0
    hdr, rows = report.read_csv(tmp_path / "sobolev.csv")
    assert hdr == ["n", "integral", "quad_error"]
    assert [int(r[0]) for r in rows] == [0, 1, 2]
    assert (tmp_path / "sobolev.svg").exists()
    assert main(["acl-witness", "--field", str(fld), "--probes", "0.5",
                 "--out-dir", str(tmp_path)]) == 0
    hdr, rows = report.read_csv(tmp_path / "acl.csv")
    assert float(rows[0][hdr.index("max_offfamily_dx")]) == 0.0
    assert main(["report", "--family", str(fam), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "boxes.svg").exists()
    # the field description pins the family contents
    fam.write_bytes(fam.read_bytes() + b"\0")
    assert main(["sobolev", "--field", str(fld), "--out-dir", str(tmp_path)]) == 1


def test_statistics_commands(tmp_path):
    d = str(tmp_path)
    assert main(["estimate-q", "--trials", "2000", "--seed", "1", "--out-dir", d]) == 0
    assert main(["fixed-point", "--c", "0.2", "--trials", "2000", "--n-max", "4",
                 "--seed", "1", "--out-dir", d]) == 0
    hdr, rows = report.read_csv(tmp_path / "alpha.csv")
    assert len(rows) == 4
    assert main(["stitch-demo", "--trials", "1000", "--seed", "1", "--out-dir", d]) == 0
    assert main(["excursion-checks", "--n", "1024", "--trials", "20000", "--ks-trials", "2000",
                 "--seed", "1", "--out-dir", d]) in (0, 1)
    assert (tmp_path / "excursion.csv").exists()


def test_path_commands(tmp_path):
    d = str(tmp_path)
    assert main(["cover", "--log2-steps", "12", "--y", "0.1", "--k-max", "4",
                 "--seed", "2", "--out-dir", d]) == 0
    hdr, rows = report.read_csv(tmp_path / "cover.csv")
    assert hdr == report.HEADERS["cover"] and len(rows) == 3
    assert main(["route", "--log2-steps", "12", "--queries", "5", "--eps", "0.2",
                 "--seed", "2", "--out-dir", d]) == 0
    hdr, rows = report.read_csv(tmp_path / "routes.csv")
    assert len(rows) == 5 and "violation" not in [r[hdr.index("status")] for r in rows]
