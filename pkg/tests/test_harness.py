import numpy as np
import pytest

from rgbtseg import ablate, cli
from rgbtseg.config import ConfigError, load_config, parse_config
from rgbtseg.model import Ablation, SegModel
from rgbtseg.priors import PriorError, build_priors_from_dirs, load_priors
from rgbtseg.train import (
    AdamW, DataMismatchError, NumericError, batch_indices, evaluate, load_checkpoint, poly_lr, read_log,
    train, train_split,
)
from rgbtseg.nn import Parameter

TINY = [
    "model.channels=4,6,8,10", "model.embed_dim=8", "model.heads=4", "model.router_hidden=4",
    "data.image_size=32", "data.max_offset_px=3", "data.train_size=8", "data.val_size=4",
    "optim.max_steps=6", "optim.batch_size=2", "optim.warmup_steps=2", "run.figures=false",
]


def tiny(*extra):
    return parse_config("", TINY + list(extra))


def set_args(*extra):
    out = []
    for item in TINY + list(extra):
        out += ["--set", item]
    return out


# -- configuration ------------------------------------------------------------

def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# desk run\noptim.lr=0.002   # faster\nablation.sgcm=off\nmodel.channels=8,8,8,8\n")
    cfg = load_config(p, ["optim.lr=0.003"])
    assert cfg.optim.lr == 0.003 and cfg.ablation.sgcm is False and cfg.model.channels == (8, 8, 8, 8)
    assert parse_config(cfg.to_text()).to_text() == cfg.to_text()


def test_config_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("optim.lr=0.1\n\noptim.nope=3\n")
    with pytest.raises(ConfigError, match=r"bad\.cfg:3"):
        load_config(p)
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("optim.max_steps=ten\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("no equals sign\n")
    with pytest.raises(ConfigError):
        parse_config("", ["model.gamma=1.5"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_defaults():
    cfg = parse_config("")
    assert (cfg.optim.lr, cfg.optim.weight_decay, cfg.optim.poly_power) == (1e-3, 0.01, 0.9)
    assert (cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps) == (0.9, 0.999, 1e-8)
    assert (cfg.optim.max_steps, cfg.optim.batch_size, cfg.optim.warmup_steps) == (2000, 4, 100)
    assert (cfg.data.image_size, cfg.model.num_classes, cfg.model.gamma) == (64, 12, 0.85)


def test_poly_schedule():
    assert poly_lr(100, 1e-3, 100, 2000) == pytest.approx(1e-3 * (1 - 100 / 2000) ** 0.9)
    assert poly_lr(50, 1e-3, 100, 2000) == pytest.approx(0.5e-3 * (1 - 50 / 2000) ** 0.9)
    assert poly_lr(2000, 1e-3, 100, 2000) == 0.0


def test_adamw_decays_only_matrices():
    w, b = Parameter(np.ones((2, 2))), Parameter(np.ones(2))
    opt = AdamW([("w", w), ("b", b)], weight_decay=0.5)
    w.grad, b.grad = np.zeros((2, 2)), np.zeros(2)
    opt.step(0.1)
    np.testing.assert_allclose(w.data, 1 - 0.1 * 0.5)
    np.testing.assert_array_equal(b.data, 1.0)


def test_batch_indices_pure_and_epoch_permutation():
    a = [tuple(batch_indices(3, s, 8, 2)) for s in range(4)]
    assert a == [tuple(batch_indices(3, s, 8, 2)) for s in range(4)]
    assert sorted(i for t in a for i in t) == list(range(8))


# -- training -----------------------------------------------------------------

def test_zero_steps_writes_initial_checkpoint(tmp_path):
    res = train(tiny("optim.max_steps=0"), tmp_path)
    assert res.rows == [] and read_log(tmp_path / "log.csv") == []
    ck = load_checkpoint(res.checkpoint)
    assert ck.step == 0
    fresh = SegModel(ck.cfg.model, ck.cfg.ablation, None, seed=0).state_dict()
    for k, v in ck.model.state_dict().items():
        if not k.startswith("buffer:"):
            np.testing.assert_array_equal(v, fresh[k])


def test_same_seed_same_log(tmp_path):
    train(tiny(), tmp_path / "a")
    train(tiny(), tmp_path / "b")
    assert (tmp_path / "a/log.csv").read_bytes() == (tmp_path / "b/log.csv").read_bytes()
    text = (tmp_path / "a/log.csv").read_text().splitlines()
    assert text[0] == "step,lr,seg,dis,kg,total,lambda_mean" and len(text) == 7


def test_resume_reproduces_the_uninterrupted_log(tmp_path):
    full = train(tiny("run.checkpoint_every=3"), tmp_path / "full")
    mid = tmp_path / "full" / "ckpt_000003.ust1"
    assert mid.exists()
    resumed = train(tiny("run.checkpoint_every=3"), tmp_path / "resumed", resume=mid)
    assert [r["step"] for r in resumed.rows] == [4, 5, 6]
    assert resumed.rows == full.rows[3:]


def test_empty_and_mismatched_data():
    cfg = tiny()
    with pytest.raises(DataMismatchError):
        train(cfg, samples=[], write_files=False)
    model = train(tiny("optim.max_steps=0"), write_files=False).model
    with pytest.raises(DataMismatchError):
        evaluate(model, [])
    samples = train_split(cfg)
    samples[0].labels[0, 0] = 20
    with pytest.raises(DataMismatchError):
        evaluate(model, samples[:1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_names_the_term():
    with pytest.raises(NumericError, match="step"):
        train(tiny("optim.lr=1e30", "optim.warmup_steps=0", "optim.max_steps=6"), write_files=False)


def test_flags_do_not_touch_other_modules():
    cfg = tiny()
    full = SegModel(cfg.model, Ablation(), None, seed=4).state_dict()
    no_graph = SegModel(cfg.model, Ablation(sgcm=False), None, seed=4).state_dict()
    shared = [k for k in no_graph if k.startswith(("backbone.", "stages.", "router.", "decoder."))]
    assert shared
    for k in shared:
        np.testing.assert_array_equal(full[k], no_graph[k])


# -- ablation table -----------------------------------------------------------

def test_presets_and_sweeps():
    assert [a.name for a in ablate.PRESETS["modules"]] == ["baseline", "+FDAM", "+SGCM", "+FDAM+SGCM"]
    assert len(ablate.PRESETS["fdam"]) == 4 and len(ablate.PRESETS["sgcm"]) == 5
    assert ablate.SWEEPS["lambda_dis"][1] == (0.0, 0.05, 0.1, 0.5, 1.0)
    assert len(ablate.resolve_arms("gamma")) == 5
    with pytest.raises(KeyError):
        ablate.resolve_arms("nope")


def test_single_arm_is_train_and_evaluate(tmp_path):
    cfg = tiny("optim.max_steps=2")
    table, records = ablate.ablate(cfg, ablate.PRESETS["modules"][:1], seeds=[0], out_dir=tmp_path,
                                   figures=False)
    assert len(table) == 1 and table[0]["n_seeds"] == 1 and table[0]["miou_spread"] == 0.0
    assert (tmp_path / "ablation.csv").read_text().startswith("arm,n_seeds,miou_mean")
    assert 0.0 <= records[0].miou <= 1.0


# -- priors -------------------------------------------------------------------

def _write_split(tmp_path, K=12):
    rc = cli.main(["gen-data", "--out", str(tmp_path / "split"), "--count", "5", *set_args(f"model.num_classes={K}")])
    assert rc == 0
    return tmp_path / "split"


def test_priors_bit_identical_and_k_mismatch(tmp_path):
    split = _write_split(tmp_path)
    tax = split / "taxonomy.txt"
    build_priors_from_dirs(tax, split, tmp_path / "p1")
    build_priors_from_dirs(tax, split, tmp_path / "p2")
    for name in ("A_H.ust1", "A_C.ust1", "A_p.ust1"):
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p2" / name).read_bytes()
    assert set(load_priors(tmp_path / "p1")) >= {"a_h", "a_c", "a_p"}
    short = tmp_path / "short.txt"
    short.write_text("".join(tax.read_text().splitlines(keepends=True)[:-1]))
    with pytest.raises(PriorError):
        build_priors_from_dirs(short, split, tmp_path / "p3")
    assert cli.main(["build-priors", "--taxonomy", str(short), "--split", str(split),
                     "--out", str(tmp_path / "p4"), "--no-figures"]) == cli.EXIT_DATA


# -- command line -------------------------------------------------------------

def test_cli_round_trip(tmp_path, capsys):
    split = _write_split(tmp_path)
    assert cli.main(["build-priors", "--taxonomy", str(split / "taxonomy.txt"), "--split", str(split),
                     "--out", str(tmp_path / "priors")]) == cli.EXIT_OK
    assert (tmp_path / "priors" / "priors.png").exists()
    run = tmp_path / "run"
    args = ["train", "--out", str(run), *set_args("optim.max_steps=2", "run.figures=true")]
    assert cli.main(args) == cli.EXIT_OK
    assert (run / "loss_curves.png").exists() and (run / "checkpoint.ust1").exists()
    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.ust1"), "--split", str(split)]) == cli.EXIT_OK
    kv = (run / "metrics.txt").read_text()
    assert "miou=" in kv and "tail_iou=" in kv
    assert (run / "per_class_iou.csv").exists() and (run / "per_class_iou.png").exists()
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--set", "optim.bogus=1"]) == cli.EXIT_CONFIG
    assert cli.main(["ablate", "--preset", "nope", *set_args()]) == cli.EXIT_CONFIG
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.ust1")]) == cli.EXIT_DATA
    bad = tmp_path / "bad.ust1"
    bad.write_bytes(b"junk")
    assert cli.main(["eval", "--checkpoint", str(bad)]) == cli.EXIT_DATA
    args = ["train", "--out", str(tmp_path / "nan"), *set_args("optim.lr=1e30", "optim.warmup_steps=0")]
    assert cli.main(args) == cli.EXIT_NUMERIC
    assert cli.main(["grad-check", "--only", "add,mul"]) == cli.EXIT_OK
    assert "2/2 checks passed" in capsys.readouterr().out


def test_grad_check_coverage_floor():
    from rgbtseg.gradsuite import CHECKS
    assert len(CHECKS) >= 15
    for name in ("bilinear_sample", "deform_conv", "loss_align", "loss_orth", "loss_sem",
                 "gat_layer_concat", "aggregate_nodes", "ohem_ce_frozen", "end_to_end"):
        assert any(k.startswith(name) for k in CHECKS), name
