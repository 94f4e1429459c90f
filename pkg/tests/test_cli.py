import csv

import numpy as np
import pytest

from fixtures import checkerboard, grating, noise, texture
from metamer.cli import main
from metamer.dump import read_dump
from metamer.image import ImageBuffer, load_image, save_image


@pytest.fixture
def png(tmp_path):
    def write(name, plane):
        path = tmp_path / name
        save_image(ImageBuffer.gray(plane), path)
        return str(path)

    return write


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# --- stats --------------------------------------------------------------------


def test_stats_pooled_constant_image(png, tmp_path, capsys):
    src = png("flat.png", np.full((64, 64), 0.5))
    code, out, _ = run(capsys, "stats", src, "--pooled", "--uniform-diameter", "16", "--out", str(tmp_path / "p"))
    assert code == 0
    entries, header, data = read_dump(tmp_path / "p")
    assert len(entries) == 259 and header["geometry.mode"] == "uniform"
    assert np.allclose(data, data[:, :1, :1], atol=1e-6)  # every pooled plane is constant
    assert "259" in out


def test_stats_full_resolution(png, tmp_path, capsys):
    src = png("t.png", texture(64))
    code, _, _ = run(capsys, "stats", src, "--set", "scales=4", "--set", "orientations=4", "--out", str(tmp_path / "s"))
    assert code == 0
    entries, _, data = read_dump(tmp_path / "s")
    assert len(entries) == 97 and data.shape == (97, 64, 64)
    assert np.all(np.isfinite(data))


def test_stats_missing_input(tmp_path, capsys):
    code, _, err = run(capsys, "stats", str(tmp_path / "nope.png"))
    assert code == 2 and "nope.png" in err


def test_stats_unknown_config_key(png, capsys):
    code, _, err = run(capsys, "stats", png("a.png", texture(64)), "--set", "scale=4")
    assert code == 2 and "unknown config key" in err


def test_geometry_flags_exclusive(png, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["stats", png("a.png", texture(64)), "--global", "--uniform-diameter", "8"])
    assert exc.value.code == 2


# --- synthesize -------------------------------------------------------------------


def test_synthesize_from_target_is_identity(png, tmp_path, capsys):
    src = png("t.png", texture(64))
    out = tmp_path / "m.png"
    code, text, _ = run(
        capsys, "synthesize", src, "--out", str(out), "--seed-from", src, "--set", "scales=4",
        "--set", "dtype=float64", "--uniform-diameter", "16",
    )
    assert code == 0
    assert np.array_equal(load_image(out).data, load_image(src).data)
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0][0] == "iteration" and rows[2] == []
    assert "iterations 1" in text


def test_synthesize_deterministic(png, tmp_path, capsys):
    src = png("t.png", texture(64))
    args = ["--global", "--set", "scales=4", "--max-iters", "6", "--rng-seed", "3"]
    assert run(capsys, "synthesize", src, "--out", str(tmp_path / "a.png"), *args)[0] == 0
    assert run(capsys, "synthesize", src, "--out", str(tmp_path / "b.png"), *args)[0] == 0
    assert np.array_equal(load_image(tmp_path / "a.png").data, load_image(tmp_path / "b.png").data)
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


def test_synthesize_reports_summary(png, tmp_path, capsys):
    src = png("t.png", texture(64))
    code, text, _ = run(capsys, "synthesize", src, "--out", str(tmp_path / "m.png"), "--global", "--set", "scales=4", "--max-iters", "5")
    assert code == 0
    assert "kinds within 2%" in text and "median relative error" in text


# --- descriptors -------------------------------------------------------------------


@pytest.fixture
def corpus_dir(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    for name, plane in [("a", texture(64)), ("b", grating(64, 6.0, 0.4)), ("c", checkerboard(64, 8)), ("d", noise(64))]:
        save_image(ImageBuffer.gray(plane), d / f"{name}.png")
    return d


FAST = ["--set", "window_sizes=32", "--set", "windows_per_size=6"]


def test_descriptors_calibrate_then_apply(corpus_dir, tmp_path, capsys):
    cal = tmp_path / "cal.txt"
    code, _, _ = run(capsys, "descriptors", str(corpus_dir), "--out", str(tmp_path / "d.csv"), "--calibrate", str(cal), *FAST)
    assert code == 0 and cal.is_file()
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert len(rows) == 5
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert vals.min() >= 0 and vals.max() <= 1

    code, _, _ = run(capsys, "descriptors", str(corpus_dir / "a.png"), "--out", str(tmp_path / "e.csv"), "--apply", str(cal), *FAST)
    assert code == 0
    again = list(csv.reader(open(tmp_path / "e.csv")))
    assert again[1] == rows[1]


def test_descriptors_raw(corpus_dir, tmp_path, capsys):
    code, _, _ = run(capsys, "descriptors", str(corpus_dir / "b.png"), "--out", str(tmp_path / "r.csv"), *FAST)
    assert code == 0
    assert len(list(csv.reader(open(tmp_path / "r.csv")))) == 2


def test_descriptors_single_image_calibration_fails(corpus_dir, tmp_path, capsys):
    code, _, err = run(
        capsys, "descriptors", str(corpus_dir / "a.png"), "--out", str(tmp_path / "x.csv"), "--calibrate", str(tmp_path / "c.txt"), *FAST
    )
    assert code == 2 and "error" in err


def test_descriptors_missing_calibration(corpus_dir, tmp_path, capsys):
    code, _, err = run(capsys, "descriptors", str(corpus_dir), "--out", str(tmp_path / "x.csv"), "--apply", str(tmp_path / "no.txt"))
    assert code == 2 and "no.txt" in err


# --- gradcheck ----------------------------------------------------------------------


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--pixels", "20")
    assert code == 0
    assert out.startswith("PASS") and "max_rel_error=" in out and "median_rel_error=" in out


def test_gradcheck_zero_tolerance_fails(capsys):
    code, out, _ = run(capsys, "gradcheck", "--pixels", "10", "--tol", "0")
    assert code == 1 and out.startswith("FAIL")


# --- warp -----------------------------------------------------------------------------


def test_warp_round_trip(png, tmp_path, capsys):
    yy, xx = np.mgrid[0:128, 0:160]
    src = png("s.png", 0.3 + 0.4 * np.sin(xx / 25.0) * np.cos(yy / 31.0) ** 2)
    warped, back = tmp_path / "w.png", tmp_path / "b.png"
    common = ["--gaze", "80,64", "--set", "fovea_deg=0.3", "--set", "scales=4"]
    assert run(capsys, "warp", src, "--out", str(warped), *common)[0] == 0
    code, _, _ = run(capsys, "warp", str(warped), "--inverse", "--image-size", "160x128", "--out", str(back), *common)
    assert code == 0
    a, b = load_image(src).data[0], load_image(back).data[0]
    ecc = np.hypot(xx - 80, yy - 64)
    ring = (ecc > 20) & (ecc < 55)
    assert np.sqrt(np.mean((a[ring] - b[ring]) ** 2)) < 0.02


def test_warp_gaze_outside_image(png, tmp_path, capsys):
    code, _, err = run(capsys, "warp", png("s.png", texture(64)), "--gaze", "64,10", "--out", str(tmp_path / "w.png"))
    assert code == 2 and "outside" in err


def test_warp_corner_gaze_accepted(png, tmp_path, capsys):
    code, _, _ = run(capsys, "warp", png("s.png", texture(64)), "--gaze", "63,63", "--out", str(tmp_path / "w.png"), "--set", "fovea_deg=0.3")
    assert code == 0


def test_warp_inverse_needs_size(png, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["warp", png("s.png", texture(64)), "--gaze", "3,3", "--inverse", "--out", str(tmp_path / "w.png")])
    assert exc.value.code == 2
