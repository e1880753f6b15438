import csv

import numpy as np
import pytest

from twinpuzzle import io as pio
from twinpuzzle.cli import main


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for k in range(3):
        pio.save_image(d / f"img{k}.png", (rng.integers(0, 256, (32, 32, 3)) / 255.0))
    (d / "broken.png").write_bytes(b"not a png")
    return d


@pytest.fixture(scope="module")
def puzzle_dir(image_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("puzzles")
    rc = main(["generate", "--input", str(image_dir), "--output", str(out),
               "--piece-size", "8", "--erosion", "1", "--seed", "3"])
    assert rc == 0
    return out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestGenerate:
    def test_layout_and_manifests(self, puzzle_dir):
        dirs = sorted(p.name for p in (puzzle_dir / "img0").iterdir())
        assert dirs == ["type1_cropped", "type1_zeroframe", "type2_cropped",
                        "type2_zeroframe"]
        puz = pio.load_puzzle(puzzle_dir / "img0" / "type1_cropped")
        assert puz.n_pieces == 16 and puz.piece_size == 6

    def test_erosion_figure_in_manifest(self, puzzle_dir):
        text = (puzzle_dir / "img0" / "type1_cropped" / pio.MANIFEST).read_text()
        line = next(l for l in text.splitlines() if "erosion_area_fraction" in l)
        # 1px of an 8px piece: 1 - 36/64
        assert abs(float(line.split()[1]) - (1 - 36 / 64)) < 1e-6

    def test_unreadable_image_skipped(self, image_dir, tmp_path):
        rc = main(["generate", "--input", str(image_dir), "--output",
                   str(tmp_path / "o"), "--piece-size", "8"])
        assert rc == 0
        assert not (tmp_path / "o" / "broken").exists()

    def test_rerun_byte_identical(self, image_dir, tmp_path):
        for name in ("a", "b"):
            main(["generate", "--input", str(image_dir), "--output",
                  str(tmp_path / name), "--piece-size", "8", "--seed", "17"])
        for rel in sorted(p.relative_to(tmp_path / "a").as_posix()
                          for p in (tmp_path / "a").rglob("*") if p.is_file()):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestTrain:
    def test_zero_epochs_checkpoint_is_init(self, puzzle_dir, tmp_path):
        out = tmp_path / "ck"
        rc = main(["train", "--puzzles", str(puzzle_dir), "--model", "ten",
                   "--output", str(out), "--epochs", "0", "--iters", "2",
                   "--batch", "2", "--d", "4", "--seed", "5"])
        assert rc == 0
        from twinpuzzle.model import TwinPair, load_checkpoint

        model, meta = load_checkpoint(out)
        fresh = TwinPair.init(8, 4, seed=5 * 8 + 0)
        for pa, pb in zip(model.left.params, fresh.left.params):
            assert np.array_equal(pa, pb)
        assert meta["epochs"] == "0"
        assert (out / "loss.csv").read_text() == "epoch,mean_loss,lr\n"

    def test_loss_csv_rows_match_epochs(self, puzzle_dir, tmp_path):
        out = tmp_path / "ck"
        rc = main(["train", "--puzzles", str(puzzle_dir), "--model", "ten",
                   "--output", str(out), "--epochs", "2", "--iters", "3",
                   "--batch", "2", "--d", "4", "--seed", "5"])
        assert rc == 0
        rows = read_csv(out / "loss.csv")
        assert [r["epoch"] for r in rows] == ["0", "1"]

    def test_rerun_checkpoint_byte_identical(self, puzzle_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["train", "--puzzles", str(puzzle_dir), "--model", "ten",
                  "--output", str(out), "--epochs", "1", "--iters", "2",
                  "--batch", "2", "--d", "4", "--seed", "6"])
            outs.append(out)
        for rel in ("left.nnwt", "right.nnwt", "meta.txt", "loss.csv"):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


class TestEvaluate:
    def test_oracle_rows_all_one(self, puzzle_dir, tmp_path):
        out = tmp_path / "eval.csv"
        rc = main(["evaluate", "--puzzles", str(puzzle_dir), "--methods", "oracle",
                   "--variant", "both", "--output", str(out)])
        assert rc == 0
        rows = read_csv(out)
        assert all(float(r["top1"]) == 1.0 for r in rows)
        variants = {r["variant"] for r in rows}
        assert variants == {"type1", "type2"}

    def test_csv_schema_and_mean_rows(self, puzzle_dir, tmp_path):
        out = tmp_path / "eval.csv"
        main(["evaluate", "--puzzles", str(puzzle_dir), "--methods", "ssd,l1",
              "--variant", "type1", "--output", str(out)])
        rows = read_csv(out)
        assert set(rows[0].keys()) == {"puzzle", "method", "variant", "top1", "n_pieces"}
        means = [r for r in rows if r["puzzle"] == "mean"]
        assert {r["method"] for r in means} == {"ssd", "l1"}

    def test_matches_direct_library_calls(self, puzzle_dir, tmp_path):
        from twinpuzzle.classical import classical_all_pairs
        from twinpuzzle.solver import top1_accuracy

        out = tmp_path / "eval.csv"
        main(["evaluate", "--puzzles", str(puzzle_dir), "--methods", "mgc",
              "--variant", "type2", "--output", str(out)])
        rows = [r for r in read_csv(out) if r["puzzle"] != "mean"]
        for row in rows:
            puz = pio.load_puzzle(puzzle_dir / row["puzzle"] / "type2_cropped")
            want = top1_accuracy(classical_all_pairs(puz, "mgc", "type2"), puz)
            assert float(row["top1"]) == pytest.approx(want)

    def test_missing_checkpoint_clear_error(self, puzzle_dir, tmp_path, capsys):
        rc = main(["evaluate", "--puzzles", str(puzzle_dir), "--methods", "ten",
                   "--output", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "--ten-checkpoint" in capsys.readouterr().err

    def test_rerun_byte_identical(self, puzzle_dir, tmp_path):
        paths = []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            main(["evaluate", "--puzzles", str(puzzle_dir), "--methods", "ssd,pbc",
                  "--variant", "type1", "--output", str(path)])
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestReconstruct:
    def test_oracle_reconstruction(self, puzzle_dir, tmp_path):
        out = tmp_path / "recon"
        rc = main(["reconstruct", "--puzzles", str(puzzle_dir), "--methods", "oracle",
                   "--variant", "type2", "--output", str(out)])
        assert rc == 0
        rows = read_csv(out / "neighbor_accuracy.csv")
        assert all(float(r["neighbor_accuracy"]) == 1.0 for r in rows)
        assert (out / "img0_oracle_type2.png").exists()

    def test_oracle_render_matches_source_without_erosion(self, image_dir, tmp_path):
        # erosion 0: rendered oracle reconstruction equals the tiled source region
        puzzles = tmp_path / "pz"
        main(["generate", "--input", str(image_dir), "--output", str(puzzles),
              "--piece-size", "8", "--erosion", "0", "--seed", "1"])
        out = tmp_path / "recon"
        main(["reconstruct", "--puzzles", str(puzzles), "--methods", "oracle",
              "--variant", "type1", "--output", str(out)])
        got = pio.load_image(out / "img1_oracle_type1.png")
        src = pio.load_image(image_dir / "img1.png")
        assert np.array_equal(got, src)

    def test_rerun_csv_byte_identical(self, puzzle_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["reconstruct", "--puzzles", str(puzzle_dir), "--methods", "ssd",
                  "--variant", "type1", "--output", str(out), "--seed", "4"])
            outs.append(out / "neighbor_accuracy.csv")
        assert outs[0].read_bytes() == outs[1].read_bytes()


class TestBench:
    @pytest.fixture(scope="class")
    def checkpoints(self, puzzle_dir, tmp_path_factory):
        root = tmp_path_factory.mktemp("ck")
        main(["train", "--puzzles", str(puzzle_dir), "--model", "ten", "--output",
              str(root / "ten"), "--epochs", "0", "--iters", "1", "--batch", "2",
              "--d", "4", "--seed", "1"])
        main(["train", "--puzzles", str(puzzle_dir), "--model", "e2e", "--output",
              str(root / "e2e"), "--epochs", "0", "--iters", "1", "--batch", "2",
              "--seed", "1"])
        return root

    def test_forward_pass_counters(self, checkpoints, tmp_path):
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--sizes", "4,6", "--methods", "ten,e2e",
                   "--piece-size", "8", "--threads", "2",
                   "--ten-checkpoint", str(checkpoints / "ten"),
                   "--e2e-checkpoint", str(checkpoints / "e2e"),
                   "--output", str(out), "--plot", str(tmp_path / "bench.png")])
        assert rc == 0
        rows = read_csv(out)
        by_key = {(r["method"], int(r["n_pieces"])): r for r in rows}
        assert int(by_key[("ten", 4)]["forward_passes"]) == 8 * 4
        assert int(by_key[("ten", 6)]["forward_passes"]) == 8 * 6
        assert int(by_key[("e2e", 4)]["forward_passes"]) == 16 * 4 * 3
        assert int(by_key[("e2e", 6)]["forward_passes"]) == 16 * 6 * 5
        assert int(by_key[("ten", 4)]["distance_evals"]) == 16 * 16
        assert (tmp_path / "bench.png").exists()

    def test_memory_cap_skips_size(self, checkpoints, tmp_path, caplog):
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--sizes", "4,100000", "--methods", "ten",
                   "--piece-size", "8", "--memory-budget", "1e6",
                   "--ten-checkpoint", str(checkpoints / "ten"),
                   "--output", str(out)])
        assert rc == 0
        rows = read_csv(out)
        assert all(int(r["n_pieces"]) != 100000 for r in rows)


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_override(self, image_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("piece-size=8\nerosion=0\nseed=9\n# comment\n")
        out = tmp_path / "o"
        rc = main(["generate", "--config", str(cfg), "--input", str(image_dir),
                   "--output", str(out), "--erosion", "1"])
        assert rc == 0
        puz = pio.load_puzzle(out / "img0" / "type1_cropped")
        assert puz.piece_size == 6  # 8px pieces eroded by the overriding flag
        assert puz.erosion == 1

    def test_unknown_config_key_is_usage_error(self, image_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense=1\n")
        rc = main(["generate", "--config", str(cfg), "--input", str(image_dir),
                   "--output", str(tmp_path / "o")])
        assert rc == 1


class TestExitCodes:
    def test_usage_error_is_1(self):
        assert main(["bogus-command"]) == 1
        assert main(["evaluate", "--puzzles", "x"]) == 1  # missing --output

    def test_runtime_error_is_2(self, tmp_path):
        assert main(["evaluate", "--puzzles", str(tmp_path / "nope"),
                     "--output", str(tmp_path / "x.csv")]) == 2
