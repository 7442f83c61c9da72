import json
import socket

import numpy as np
import pytest
import yaml

from panoview.cli import _range, main
from panoview.geometry import CameraIntrinsics, CameraPose
from panoview.imageio import read_png, write_features, write_matches, write_pfm, write_png, write_poses
from panoview.synthetic import BoxRoom

I4 = np.array([1.0, 0, 0, 0])


@pytest.fixture
def scene(tmp_path):
    pano, depth = BoxRoom().render_panorama((0, 0, 0), 32, 64)
    write_png(tmp_path / "pano.png", pano.data, bits=16)
    write_pfm(tmp_path / "depth.pfm", depth.data)
    return tmp_path


def test_range_parser_is_inclusive():
    assert _range("4.0:5.5:0.5") == [4.0, 4.5, 5.0, 5.5]


def test_project_single_view_and_split(scene):
    assert main(["project", str(scene / "pano.png"), "--out", str(scene / "v.png"), "--out-size", "24x16"]) == 0
    assert read_png(scene / "v.png").shape == (16, 24, 3)
    assert main(["project", str(scene / "pano.png"), "--out", str(scene / "ring"), "--split", "4",
                 "--out-size", "16x16"]) == 0
    meta = json.loads((scene / "ring" / "views.json").read_text())
    assert [round(m["yaw_degrees"]) % 360 for m in meta] == [0, 90, 180, 270]
    assert main(["project", str(scene / "v.png"), "--out", str(scene / "back.png"), "--direction", "persp2pano",
                 "--pano-height", "16"]) == 0
    assert read_png(scene / "back.png").shape == (16, 32, 3)


def test_keyframes_both_modes(scene):
    out = scene / "kf"
    assert main(["keyframes", "--pano", str(scene / "pano.png"), "--depth", str(scene / "depth.pfm"),
                 "--out-size", "16x16", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"pair_00_source.png", "pair_00_target.png", "pair_00_mask.png",
                                              "pair_00.json"}
    assert main(["keyframes", "--pano", str(scene / "pano.png"), "--mode", "neighbor", "--views", "4", "--hfov", "120",
                 "--out-size", "16x16", "--out", str(scene / "nb")]) == 0
    assert len(list((scene / "nb").glob("*_mask.png"))) == 4


def test_keyframes_walkin_without_depth_is_validation_error(scene):
    assert main(["keyframes", "--pano", str(scene / "pano.png"), "--out", str(scene / "kf")]) == 2


def test_trajectory_modes(scene):
    star = scene / "star.json"
    assert main(["trajectory", "--mode", "star", "--depth", str(scene / "depth.pfm"), "--n-directions", "4",
                 "--out", str(star)]) == 0
    recs = json.loads(star.read_text())
    assert len(recs) > 4 and all("timestamp" in r for r in recs)
    K = CameraIntrinsics.from_fov(8, 8, np.pi / 2)
    write_poses(scene / "two.json", [CameraPose(I4, np.zeros(3)), CameraPose(I4, np.array([1.0, 0, 0]))], K)
    assert main(["trajectory", "--mode", "interpolate", "--poses", str(scene / "two.json"), "--frames", "5",
                 "--out", str(scene / "i.json")]) == 0
    assert len(json.loads((scene / "i.json").read_text())) == 5
    assert main(["trajectory", "--mode", "upsample", "--poses", str(scene / "two.json"), "--max-trans-meters",
                 "0.25", "--out", str(scene / "u.json")]) == 0
    assert len(json.loads((scene / "u.json").read_text())) == 5
    assert main(["trajectory", "--mode", "interpolate", "--out", str(scene / "x.json")]) == 2


def test_raymap_command(tmp_path):
    from panoview.raymap import read_raymap_volume
    K = CameraIntrinsics.from_fov(16, 16, np.pi / 2)
    write_poses(tmp_path / "p.json", [CameraPose(I4, np.array([0, 0, float(k)])) for k in range(3)], K)
    assert main(["raymap", "--poses", str(tmp_path / "p.json"), "--size", "8x8", "--out", str(tmp_path / "r.plkr")]) == 0
    vol = read_raymap_volume(tmp_path / "r.plkr")
    assert vol.data.shape == (8, 8, 18) and vol.frames == 3
    write_poses(tmp_path / "noK.json", [CameraPose(I4, np.zeros(3))])
    assert main(["raymap", "--poses", str(tmp_path / "noK.json"), "--out", str(tmp_path / "r2.plkr")]) == 2


def test_sample_panorama_with_oracle(tmp_path):
    H, W = 8, 16
    truth = np.tile(np.linspace(0, 1, W, endpoint=False)[None, :, None], (H, 1, 3))
    mask = np.zeros((H, W))
    mask[:, :4] = 1
    np.save(tmp_path / "truth.npy", truth)
    np.save(tmp_path / "known.npy", truth * mask[..., None])
    np.save(tmp_path / "mask.npy", mask)
    assert main(["sample", "--mode", "panorama", "--steps", "12", "--denoiser", f"oracle:{tmp_path / 'truth.npy'}",
                 "--known", str(tmp_path / "known.npy"), "--mask", str(tmp_path / "mask.npy"),
                 "--out", str(tmp_path / "pano")]) == 0
    z = np.load(tmp_path / "pano.npy")
    assert np.max(np.abs(z - truth)) < 1e-6
    assert (tmp_path / "pano.png").exists()


def test_sample_video_with_stub(tmp_path):
    K = CameraIntrinsics.from_fov(12, 12, np.pi / 2)
    poses = [CameraPose(I4, np.array([0, 0, 0.1 * k])) for k in range(4)]
    write_poses(tmp_path / "p.json", poses, K)
    write_png(tmp_path / "s.png", np.full((12, 12, 3), 0.3))
    write_png(tmp_path / "t.png", np.full((12, 12, 3), 0.6))
    args = ["sample", "--mode", "video", "--steps", "5", "--source", str(tmp_path / "s.png"), "--target",
            str(tmp_path / "t.png"), "--poses", str(tmp_path / "p.json"), "--out", str(tmp_path / "v")]
    assert main(args) == 0
    assert np.load(tmp_path / "v" / "frames.npy").shape[0] == 4
    assert len(list((tmp_path / "v").glob("frame_*.png"))) == 4


def test_sample_unreachable_denoiser_is_runtime_failure(tmp_path):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    np.save(tmp_path / "k.npy", np.zeros((4, 8, 3)))
    np.save(tmp_path / "m.npy", np.zeros((4, 8)))
    assert main(["sample", "--mode", "panorama", "--steps", "3", "--denoiser", f"external:127.0.0.1:{port}",
                 "--known", str(tmp_path / "k.npy"), "--mask", str(tmp_path / "m.npy"),
                 "--out", str(tmp_path / "o")]) == 3


def test_sample_bad_denoiser_spec(tmp_path):
    assert main(["sample", "--mode", "panorama", "--denoiser", "magic", "--out", str(tmp_path / "o")]) == 2


def test_eval_metrics(tmp_path, rng, capsys):
    for d in ("a", "b"):
        write_png(tmp_path / d / "f0.png", np.full((12, 12, 3), 0.5))
    assert main(["eval", "--metric", "psnr", "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b"),
                 "--formats", "csv", "json", "svg", "--out", str(tmp_path / "rep")]) == 0
    assert "inf" in (tmp_path / "rep.csv").read_text()
    assert (tmp_path / "rep.svg").read_bytes().startswith(b"<?xml")
    assert main(["eval", "--metric", "ssim", "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b"),
                 "--out", str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s.json").read_text())["rows"][0]["ssim"] == pytest.approx(1.0)

    write_features(tmp_path / "fa.bin", rng.normal(size=(50, 3)))
    write_features(tmp_path / "fb.bin", rng.normal(size=(50, 3)) + 3.0)
    assert main(["eval", "--metric", "fvd", "--features-a", str(tmp_path / "fa.bin"), "--features-b",
                 str(tmp_path / "fb.bin"), "--out", str(tmp_path / "f")]) == 0
    assert json.loads((tmp_path / "f.json").read_text())["rows"][0]["fvd"] > 20

    K = CameraIntrinsics.from_fov(64, 64, np.pi / 2)
    rel = CameraPose(I4, np.array([-1.0, 0, 0]))
    X = np.c_[rng.uniform(-1, 1, (20, 2)), rng.uniform(3, 6, 20)]
    xa = X[:, :2] / X[:, 2:] * K.fx + K.cx
    xb = (X[:, :2] + [-1.0, 0]) / X[:, 2:] * K.fx + K.cx
    write_matches(tmp_path / "m.json", np.c_[xa, xb], rel, K, K)
    assert main(["eval", "--metric", "mtsed", "--matches", str(tmp_path / "m.json"), "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["rows"][0]["mtsed"] == 1.0


def test_eval_missing_inputs(tmp_path):
    assert main(["eval", "--metric", "psnr", "--out", str(tmp_path / "r")]) == 2
    assert main(["eval", "--metric", "psnr", "--a", str(tmp_path / "nope"), "--b", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "r")]) == 2


def test_pipeline_command(tmp_path):
    cfg = {"pano_height_px": 32, "view_size_px": 16, "latent_size_px": 12, "steps": 4, "n_views": 4,
           "frames_per_pair": 3, "stages": ["project", "keyframes"]}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["pipeline", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "manifest.json").exists()
    (tmp_path / "bad.yaml").write_text("n_views: 1\n")
    assert main(["pipeline", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "r2")]) == 2
    assert main(["pipeline", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_sweep_command(tmp_path, capsys):
    assert main(["sweep", "--tau-t-range", "4:5:0.5", "--tau-q-range", "1:2:1", "--steps", "3",
                 "--out", str(tmp_path / "sw")]) == 0
    best = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert {"tau_t", "tau_q", "score"} <= set(best)
    assert b"<image" in (tmp_path / "sw.svg").read_bytes()


def test_argparse_errors_exit_two():
    with pytest.raises(SystemExit) as e:
        main(["project"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["raymap", "--poses", "p", "--size", "bad", "--out", "o"])
    assert e.value.code == 2
