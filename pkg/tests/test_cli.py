import json
import subprocess
import sys

import numpy as np
import pytest

import ncae
from ncae.checkpoint import load_checkpoint
from ncae.cli import main
from ncae.data import InteractionMatrix, SplitSpec, load_ratings, split, write_ratings
from ncae.model import predict_dense
from ncae.pipeline import RunConfig, restore, run_train
from ncae.synthetic import clustered_implicit, low_rank_explicit

FIXTURE = str(ncae.fixture_path())
FAST = ["--hidden", "8", "--epochs", "3", "--sr-epochs", "1", "--dr-epochs", "1", "--v-epochs", "1"]


def _records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _train(tmp_path, capsys, *extra, name="m.ckpt", data=FIXTURE):
    path = tmp_path / name
    code = main(["train", "--data", data, "--checkpoint", str(path), *extra])
    out = capsys.readouterr()
    assert code == 0, out.err
    return path, _records(out.out)


@pytest.fixture
def implicit_data(tmp_path):
    m, _ = clustered_implicit(n_users=80, seed=2)
    path = tmp_path / "implicit.tsv"
    write_ratings(m, path)
    return str(path)


def test_bundled_fixture_shape():
    m = load_ratings(FIXTURE)
    assert (m.n_users, m.n_items, m.nnz) == (20, 15, 150)


def test_train_with_defaults(tmp_path, capsys):
    path, recs = _train(tmp_path, capsys)
    assert path.exists()
    events = [r["event"] for r in recs]
    assert events[:2] == ["data", "split"] and events[-2:] == ["final", "checkpoint"]
    epochs = [r for r in recs if r["event"] == "epoch"]
    assert [r["stage"] for r in epochs].count("fine-tune") == 30
    assert all("valid_rmse" in r for r in epochs if r["stage"] == "fine-tune")
    assert {r["stage"] for r in epochs} == {"sr", "dr1", "v", "fine-tune"}
    ck = load_checkpoint(path)
    assert ck.params.dims == [20, 500, 500, 20]  # item-based by default


def test_same_seed_gives_identical_checkpoint(tmp_path, capsys):
    a, _ = _train(tmp_path, capsys, *FAST, name="a")
    b, _ = _train(tmp_path, capsys, *FAST, name="b")
    c, _ = _train(tmp_path, capsys, *FAST, "--seed", "1", name="c")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_evaluate_matches_final_log(tmp_path, capsys):
    path, recs = _train(tmp_path, capsys, *FAST)
    final = recs[-2]
    assert main(["evaluate", "--checkpoint", str(path)]) == 0
    (rec,) = _records(capsys.readouterr().out)
    assert rec == {"metric": "rmse", "M": None, "value": final["test_rmse"], "users": rec["users"]}
    out = tmp_path / "valid.jsonl"
    assert main(["evaluate", "--checkpoint", str(path), "--part", "valid", "--per-user", "--output", str(out)]) == 0
    lines = _records(out.read_text())
    assert lines[0]["value"] == [r for r in recs if r["event"] == "epoch"][-1]["valid_rmse"]
    assert len(lines) == 1 + lines[0]["users"]


def test_in_process_scores_survive_checkpoint(tmp_path, capsys):
    path, _ = _train(tmp_path, capsys, *FAST, "--orientation", "user")
    ck, run, prep = restore(path)
    m = prep.parts.train
    # retrain in process with the same settings and compare dense scores bitwise
    again = run_train(RunConfig.from_dict(ck.run), tmp_path / "again.ckpt")
    for i in range(m.n_users):
        assert np.array_equal(predict_dense(ck.params, m.row(i), "explicit"), predict_dense(again.params, m.row(i), "explicit"))


def test_explicit_checkpoint_rejects_ranking_flags(tmp_path, capsys):
    path, _ = _train(tmp_path, capsys, *FAST)
    assert main(["evaluate", "--checkpoint", str(path), "--metric", "hr"]) == 2
    assert main(["evaluate", "--checkpoint", str(path), "--cutoffs", "10"]) == 2
    assert "RMSE only" in capsys.readouterr().err


def test_invalid_flags_fail_before_training(tmp_path, capsys):
    ck = tmp_path / "never.ckpt"
    cases = [
        ["--c0", "100"],
        ["--augment"],
        ["--mode", "implicit", "--orientation", "item"],
        ["--mode", "implicit", "--split", "ratio"],
        ["--fractions", "0.5", "0.1", "0.1"],
        ["--q", "1.0"],
        ["--hidden", "0"],
    ]
    for extra in cases:
        code = main(["train", "--data", FIXTURE, "--checkpoint", str(ck), *extra])
        out = capsys.readouterr()
        assert code == 2, extra
        assert out.out == "" and out.err.startswith("ncae train:")
        assert not ck.exists()
    assert main(["train", "--data", str(tmp_path / "missing.tsv"), "--checkpoint", str(ck)]) == 2
    assert main(["train", "--data", FIXTURE, "--checkpoint", str(tmp_path / "no" / "dir" / "x")]) == 2


def test_argparse_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", FIXTURE])
    assert exc.value.code == 2


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"hidden": [4], "epochs": 1, "pretrain": False, "seed": 3}))
    path, recs = _train(tmp_path, capsys, "--config", str(cfg), "--epochs", "2")
    assert [r["stage"] for r in recs if r["event"] == "epoch"] == ["fine-tune", "fine-tune"]
    ck = load_checkpoint(path)
    assert ck.params.dims == [20, 4, 20] and ck.run["seed"] == 3
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["train", "--data", FIXTURE, "--checkpoint", str(path), "--config", str(cfg)]) == 2


def test_implicit_pipeline_and_cutoffs(tmp_path, capsys, implicit_data):
    args = ["--mode", "implicit", "--hidden", "8", "--epochs", "2", "--no-pretrain",
            "--epsilon", "0.05", "--drop-ratio", "0.5"]
    path, recs = _train(tmp_path, capsys, *args, data=implicit_data)
    aug = [r for r in recs if r["event"] == "augment"][0]
    assert aug["enabled"] and aug["synthetic_users"] > 0
    assert "test_hr@100" in recs[-2]
    assert main(["evaluate", "--checkpoint", str(path), "--cutoffs", "50", "100"]) == 0
    recs = _records(capsys.readouterr().out)
    assert [(r["metric"], r["M"]) for r in recs] == [("hr", 50), ("ndcg", 50), ("hr", 100), ("ndcg", 100)]
    assert main(["evaluate", "--checkpoint", str(path), "--metric", "rmse"]) == 2


def test_recommend_scores_and_exclusions(tmp_path, capsys, implicit_data):
    path, _ = _train(tmp_path, capsys, "--mode", "implicit", "--hidden", "8", "--epochs", "2", data=implicit_data)
    ck, run, prep = restore(path)
    u = 5
    assert main(["recommend", "--checkpoint", str(path), "--user", ck.user_ids[u], "-M", "1000"]) == 0
    recs = _records(capsys.readouterr().out)
    train = prep.parts.train
    seen = {ck.item_ids[j] for j in train.indices[train.indptr[u] : train.indptr[u + 1]]}
    assert len(recs) == prep.matrix.n_items - len(seen)
    assert not seen & {r["item"] for r in recs}
    scores = predict_dense(ck.params, train.row(u), "implicit")
    for r in recs:
        assert r["score"] == scores[ck.item_ids.index(r["item"])]
    assert [r["score"] for r in recs] == sorted((r["score"] for r in recs), reverse=True)


def test_recommend_for_user_without_training_data(tmp_path, capsys):
    # a user whose only rating is held out for testing
    m, _ = low_rank_explicit(seed=0)
    u, j, v = m.triples()
    users = np.append(u, 20)
    items = np.append(j, 0)
    values = np.append(v, 3.0)
    seed = next(
        s for s in range(200)
        if split(InteractionMatrix.from_triples(users, items, values, 21, 15), SplitSpec(seed=s)).train.row_lengths()[20] == 0
    )
    ids = [f"u{i}" for i in range(21)]
    data = tmp_path / "cold.tsv"
    write_ratings(InteractionMatrix.from_triples(users, items, values, 21, 15, user_ids=ids, item_ids=m.item_ids), data)
    path, _ = _train(tmp_path, capsys, *FAST, "--seed", str(seed), data=str(data))
    assert main(["recommend", "--checkpoint", str(path), "--user", "u20", "-M", "3"]) == 0
    recs = _records(capsys.readouterr().out)
    assert len(recs) == 3 and all(0.5 <= r["score"] <= 5.0 for r in recs)


def test_recommend_unknown_user(tmp_path, capsys):
    path, _ = _train(tmp_path, capsys, *FAST)
    assert main(["recommend", "--checkpoint", str(path), "--user", "nobody"]) == 1
    assert "unknown user" in capsys.readouterr().err
    assert main(["recommend", "--checkpoint", str(path), "--user", "u1", "-M", "0"]) == 2


def test_checkpoint_dataset_mismatch(tmp_path, capsys, implicit_data):
    path, _ = _train(tmp_path, capsys, *FAST)
    assert main(["evaluate", "--checkpoint", str(path), "--data", implicit_data]) == 1
    assert "CompatibilityError" in capsys.readouterr().err
    assert main(["evaluate", "--checkpoint", FIXTURE]) == 1


def test_split_command(tmp_path, capsys, implicit_data):
    out = tmp_path / "parts"
    assert main(["split", "--data", implicit_data, "--mode", "implicit", "--out-dir", str(out)]) == 0
    (rec,) = _records(capsys.readouterr().out)
    full = load_ratings(implicit_data)
    sizes = {name: load_ratings(out / f"{name}.tsv").nnz for name in ("train", "valid", "test")}
    assert sum(sizes.values()) == full.nnz
    assert sizes["test"] == rec["test"] == full.n_users - rec["excluded_users"]


def test_generate_and_module_entry_point(tmp_path):
    out = tmp_path / "gen.tsv"
    assert main(["generate", "explicit", "--out", str(out), "--seed", "4"]) == 0
    assert load_ratings(out).nnz == 150
    proc = subprocess.run(
        [sys.executable, "-m", "ncae", "recommend", "--checkpoint", str(out), "--user", "x"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1 and "not a checkpoint" in proc.stderr and proc.stdout == ""
