import math
from dataclasses import replace

import numpy as np
import pytest
import torch
import yaml
from PIL import Image

from sfsc import channel as ch
from sfsc.codebook import dequantize, vq_assign
from sfsc.errors import CheckpointError, ConfigurationError
from sfsc.harness import cli
from sfsc.harness.baselines import AnalogJSCC
from sfsc.harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from sfsc.harness.config import AnalogConfig, RunConfig, SnrPolicy, config_from_dict, dump_config, load_config
from sfsc.harness.data import ingest_dataset, user_halves
from sfsc.harness.evaluate import CSV_FIELDS, diagonal_grid, evaluate_sweep, full_grid
from sfsc.harness.report import emit_report, read_csv, write_csv
from sfsc.harness.train import assign_indices, load_data, train_baseline, train_csmdma, train_sfsc
from sfsc.system import STAGES, HopSpec, SFSCSystem

TINY_NET = {"image_size": 16, "base_width": 8, "feature_dim": 8, "codebook_size": 4, "relay_width": 8,
            "film_blocks": 1, "res_blocks": 1}


def tiny_cfg(tmp_path, **kw):
    base = {"network": TINY_NET, "epochs": 1, "synthetic_count": 20, "batch_size": 8,
            "learning_rate": 1e-3, "out_dir": str(tmp_path), "run_id": "t",
            "weights": {"lambda_trans": 1e-3, "lambda_quant": 1e-3},
            "analog": {"width": 8, "channels": 4, "downsample_factor": 4},
            "evaluation": {"snr_points": [0.0, 10.0], "batch_size": 4}}
    base.update(kw)
    return config_from_dict(base)


# --- configuration ---------------------------------------------------------------------

def test_defaults_and_yaml_round_trip(tmp_path):
    cfg = tiny_cfg(tmp_path)
    path = tmp_path / "run.yaml"
    dump_config(cfg, path)
    assert load_config(path) == cfg
    assert load_config(path, seed=7).seed == 7


@pytest.mark.parametrize("data", [{"epochs": 0}, {"mode": "cdma"}, {"bogus": 1}, {"network": {"bogus": 1}},
                                  {"split_ratios": [0.5, 0.5, 0.5]}, {"train_snr_policy": {"kind": "normal"}},
                                  {"train_snr_policy": {"kind": "uniform", "low": 5, "high": 0}},
                                  {"analog": {"channels": 3}}, {"evaluation": {"grid": "spiral"}}])
def test_invalid_configs_rejected(tmp_path, data):
    with pytest.raises(ConfigurationError):
        cfg = config_from_dict(data)
        ingest_dataset(cfg.dataset_path, 16, cfg.split_ratios, 0, 10)


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SFSC_OUT_DIR", str(tmp_path / "elsewhere"))
    monkeypatch.setenv("SFSC_WORKERS", "3")
    cfg = load_config(None)
    assert cfg.out_dir == str(tmp_path / "elsewhere")
    assert cfg.workers == 3


def test_snr_policy_draws():
    rng = np.random.default_rng(0)
    ul, dl = ch.ChannelConfig(snr_db=3.0), ch.ChannelConfig(snr_db=-2.0)
    assert SnrPolicy().draw(rng, ul, dl) == (3.0, -2.0)
    draws = np.array([SnrPolicy("uniform", -10, 10).draw(rng, ul, dl) for _ in range(2000)])
    assert draws.min() >= -10 and draws.max() <= 10
    assert abs(np.corrcoef(draws.T)[0, 1]) < 0.1


# --- data -------------------------------------------------------------------------------------

def test_synthetic_split_sizes_and_determinism():
    a = ingest_dataset("synthetic", 16, (0.8, 0.1, 0.1), seed=3, synthetic_count=1000)
    assert (len(a.train_ids), len(a.val_ids), len(a.test_ids)) == (800, 100, 100)
    assert not set(a.train_ids) & set(a.test_ids)
    b = ingest_dataset("synthetic", 16, (0.8, 0.1, 0.1), seed=3, synthetic_count=1000)
    assert torch.equal(a.test, b.test)
    assert a.train.min() >= 0 and a.train.max() <= 1


def test_folder_ingest_skips_unreadable(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(5):
        Image.fromarray(rng.integers(0, 255, (20, 30, 3), dtype=np.uint8)).save(tmp_path / f"img{i}.png")
    (tmp_path / "broken.png").write_bytes(b"not an image")
    splits = ingest_dataset(tmp_path, 16, (0.6, 0.2, 0.2), seed=0)
    assert splits.train.shape == (3, 3, 16, 16)
    assert splits.val.shape[0] + splits.test.shape[0] == 2


def test_missing_folder(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_dataset(tmp_path / "nope", 16)
    with pytest.raises(FileNotFoundError):
        ingest_dataset(tmp_path, 16)


def test_user_halves_disjoint():
    u1, u2, ids1, ids2 = user_halves(torch.arange(7.0).reshape(7, 1, 1, 1))
    assert u1.shape[0] == u2.shape[0] == 3
    assert not set(ids1) & set(ids2)


# --- training and checkpoints -------------------------------------------------------------------

def test_train_trace_and_checkpoint_round_trip(tmp_path):
    cfg = tiny_cfg(tmp_path, pretrain_epochs=1)
    stages = []
    result = train_sfsc(cfg, tracer=stages.append)
    assert tuple(stages[:len(STAGES)]) == STAGES
    assert len(stages) == len(STAGES) * math.ceil(16 / 8)
    assert [r["stage"] for r in result.log] == ["pretrain", "train"]
    ckpt = load_checkpoint(result.checkpoint_path, expect_network=cfg.network.to_dict(), expect_mode="sfsc")
    assert ckpt.epoch == 1
    model = type(result.model)(cfg.network)
    model.load_state_dict(ckpt.model_state)
    for a, b in zip(model.state_dict().values(), result.model.state_dict().values()):
        assert torch.equal(a, b)


def test_index_assignment_only_relabels(tmp_path):
    cfg = tiny_cfg(tmp_path, pretrain_epochs=1, index_assignment=True)
    data = load_data(cfg)
    model = SFSCSystem(cfg.network)
    before = model.codebook.vectors.detach().clone()
    feats = model.encoder(data.train[:4]).detach()
    recon = dequantize(vq_assign(feats, model.codebook), model.codebook)
    order = assign_indices(model, data.train, cfg)
    assert sorted(order.tolist()) == list(range(4))
    assert torch.equal(model.codebook.vectors.detach(), before[order])
    assert torch.equal(dequantize(vq_assign(feats, model.codebook), model.codebook), recon)
    result = train_sfsc(cfg, data, save=False)
    assert math.isfinite(result.final_smoothed())


def test_checkpoint_rejections(tmp_path):
    path = save_checkpoint(Checkpoint({}, {"network": TINY_NET, "mode": "sfsc"}, 0), tmp_path / "c.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_network={**TINY_NET, "codebook_size": 16})
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_mode="csmdma")
    bad = save_checkpoint(Checkpoint({}, {}, 0, version=99), tmp_path / "v.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    (tmp_path / "junk.pt").write_bytes(b"\x00\x01junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")


def test_same_seed_same_losses(tmp_path):
    cfg = tiny_cfg(tmp_path)
    a = train_sfsc(cfg, save=False)
    b = train_sfsc(cfg, save=False)
    assert a.step_losses == b.step_losses
    c = train_sfsc(replace(cfg, seed=1), save=False)
    assert c.step_losses != a.step_losses


def test_mdma_and_baselines_train(tmp_path):
    cfg = tiny_cfg(tmp_path, mode="csmdma", pretrain_epochs=1)
    result = train_csmdma(cfg, save=False)
    assert [r["stage"] for r in result.log] == ["pretrain", "train"]
    assert math.isfinite(result.log[-1]["total"])
    for mode in ("tm_deepjscc", "rm_deepjscc"):
        res = train_baseline(replace(cfg, mode=mode), save=False)
        assert res.model.relay == mode[:2]


# --- baselines ---------------------------------------------------------------------------------------

def test_baseline_traces_and_symbols():
    torch.manual_seed(0)
    x = torch.rand(2, 3, 64, 64)
    hop = HopSpec(ch.ChannelConfig(snr_db=5.0), 1, 2)
    for relay, middle in (("tm", ["relay_transparent"]), ("rm", ["relay_decode", "relay_encode"])):
        model = AnalogJSCC(AnalogConfig(), 64, relay)
        assert model.symbols == 1024
        trace = []
        out = model(x, hop, hop, tracer=trace.append)
        assert trace == ["encode", "uplink", *middle, "downlink_decode"]
        assert out.shape == x.shape
    with pytest.raises(ConfigurationError):
        AnalogJSCC(AnalogConfig(), 64, "df")


def test_tm_noise_composes_across_hops():
    """Amplify-and-forward stacks the uplink noise under the downlink noise."""
    cfg = ch.ChannelConfig(rician_k=math.inf, snr_db=0.0)
    ideal = replace(cfg, snr_db=300.0)
    g = torch.Generator().manual_seed(0)
    frame = torch.complex(torch.randn(64, 4096, generator=g), torch.randn(64, 4096, generator=g))
    frame = frame / ch.frame_power(frame).sqrt()

    def hop(c, f, seed):
        return HopSpec(c, seed, seed + 1).transmit(f)

    def effective_snr(c1, c2):
        rx = hop(c2, ch.transparent_forward(hop(c1, frame, 1)), 3)
        real = ch.sample_realization(c1, 1, frame.shape[:-1], frame.dtype)
        real2 = ch.sample_realization(c2, 3, frame.shape[:-1], frame.dtype)
        clean = ch.equalize(ch.equalize(rx, real2) * ch.frame_power(hop(c1, frame, 1)).sqrt(), real)
        err = (clean - frame).abs().square().mean()
        return -10 * math.log10(err.item())

    one_hop = effective_snr(cfg, ideal)
    two_hop = effective_snr(cfg, cfg)
    assert one_hop == pytest.approx(0.0, abs=0.2)
    assert two_hop < one_hop - 1.0


# --- evaluation and reporting ----------------------------------------------------------------------------

def test_grids():
    rows = diagonal_grid(-10, 10, 2)
    assert len(rows) == 11 and rows[0] == (-10.0, -10.0) and rows[-1] == (10.0, 10.0)
    assert len(full_grid([0, 5, 10])) == 9


def test_sweep_csv_round_trip_and_reports(tmp_path):
    cfg = tiny_cfg(tmp_path)
    result = train_sfsc(cfg, save=False)
    images = ingest_dataset("synthetic", 16, synthetic_count=20).test
    rows = evaluate_sweep(result.model, images, diagonal_grid(-10, 10, 10), cfg.channel_ul, cfg.channel_dl,
                          "t", "sfsc", seed=5, batch_size=4)
    again = evaluate_sweep(result.model, images, diagonal_grid(-10, 10, 10), cfg.channel_ul, cfg.channel_dl,
                           "t", "sfsc", seed=5, batch_size=4)
    assert rows == again
    assert rows[0]["rate"] == pytest.approx(64 / (16 * 16 * 3))
    path = write_csv(rows, tmp_path / "s.csv")
    back = read_csv(path)
    assert list(back[0]) == list(CSV_FIELDS)
    for a, b in zip(rows, back):
        for key in ("ul_snr_db", "dl_snr_db", "psnr_db", "ms_ssim", "rate"):
            assert abs(a[key] - b[key]) <= 1e-9
    files = emit_report(rows, tmp_path / "rep")
    assert files["line"].exists() and files["csv"].exists()
    grid_rows = evaluate_sweep(result.model, images, full_grid([0, 10]), cfg.channel_ul, cfg.channel_dl,
                               "t", "sfsc", seed=5, batch_size=4)
    files = emit_report(grid_rows, tmp_path / "rep", "grid")
    assert files["heatmap_t"].exists()
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = tiny_cfg(tmp_path)
    result = train_sfsc(cfg, save=False)
    images = ingest_dataset("synthetic", 16, synthetic_count=20).test
    pairs = full_grid([-5, 5])
    serial = evaluate_sweep(result.model, images, pairs, cfg.channel_ul, cfg.channel_dl, "t", "sfsc", 1, 4, 1)
    parallel = evaluate_sweep(result.model, images, pairs, cfg.channel_ul, cfg.channel_dl, "t", "sfsc", 1, 4, 2)
    assert serial == parallel


# --- command line ------------------------------------------------------------------------------------------

def test_cli_train_eval_report(tmp_path, capsys):
    cfg_path = tmp_path / "run.yaml"
    dump_config(tiny_cfg(tmp_path), cfg_path)
    assert cli.main(["train", "--config", str(cfg_path), "--seed", "2"]) == 0
    out_dir = tmp_path / "t"
    assert (out_dir / "checkpoint.pt").exists() and (out_dir / "params.txt").exists()
    assert yaml.safe_load((out_dir / "config.yaml").read_text())["seed"] == 2
    assert cli.main(["sweep", "--config", str(cfg_path), "--seed", "2", "--grid", "full"]) == 0
    assert (out_dir / "sweep_full.csv").exists()
    assert cli.main(["report", str(out_dir / "sweep_full.csv"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "report.csv").exists()
    capsys.readouterr()


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("epochs: 0\n")
    assert cli.main(["train", "--config", str(bad)]) == 2
    cfg_path = tmp_path / "run.yaml"
    dump_config(tiny_cfg(tmp_path), cfg_path)
    assert cli.main(["eval", "--config", str(cfg_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_diagnose_and_baseline(tmp_path, capsys):
    cfg_path = tmp_path / "run.yaml"
    dump_config(tiny_cfg(tmp_path, mode="csmdma"), cfg_path)
    assert cli.main(["diagnose-superposition", "--config", str(cfg_path), "--eps", "0.01"]) == 0
    assert "rel.err" in capsys.readouterr().out
    assert cli.main(["baseline", "--config", str(cfg_path), "--relay", "rm"]) == 0
    assert (tmp_path / "t" / "baseline.csv").exists()
