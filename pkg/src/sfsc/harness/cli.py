"""Command-line entry point: ``sfsc <subcommand> --config run.yaml --seed N``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch

from ..codebook import vq_assign
from ..errors import CapabilityError, CheckpointError, ConfigurationError, TrainingError
from ..mdma import CSMDMASystem, diagnose_superposition, pad_split, split_semantics
from ..semnet import parameter_report
from ..system import SFSCSystem
from .baselines import AnalogJSCC
from .checkpoint import load_checkpoint
from .config import RunConfig, dump_config, load_config
from .evaluate import evaluate_sweep
from .report import emit_report, read_csv
from .train import load_data, train_baseline, train_csmdma, train_sfsc

log = logging.getLogger("sfsc")


def _model_for(cfg: RunConfig):
    if cfg.mode == "sfsc":
        return SFSCSystem(cfg.network)
    if cfg.mode == "csmdma":
        return CSMDMASystem(cfg.network, cfg.mdma)
    return AnalogJSCC(cfg.analog, cfg.network.image_size, "tm" if cfg.mode == "tm_deepjscc" else "rm",
                      cfg.network.coherent_rx)


def _restore(cfg: RunConfig, path: str | None):
    ckpt_path = Path(path) if path else cfg.output_dir / "checkpoint.pt"
    ckpt = load_checkpoint(ckpt_path, expect_network=cfg.network.to_dict(), expect_mode=cfg.mode)
    model = _model_for(cfg)
    model.load_state_dict(ckpt.model_state)
    return model


def _sweep(cfg: RunConfig, model, stem: str) -> list[dict]:
    data = load_data(cfg)
    rows = evaluate_sweep(model, data.test, cfg.evaluation.pairs(), cfg.channel_ul, cfg.channel_dl,
                          cfg.run_id, cfg.mode, cfg.evaluation.seed, cfg.evaluation.batch_size, cfg.workers)
    files = emit_report(rows, cfg.output_dir, stem)
    for row in rows:
        print(f"{row['mode']:>12s} UL {row['ul_snr_db']:6.1f} DL {row['dl_snr_db']:6.1f}  "
              f"PSNR {row['psnr_db']:7.3f} dB  MS-SSIM {row['ms_ssim']:.4f}  rate {row['rate']:.5f}")
    print(f"wrote {', '.join(str(p) for p in files.values())}")
    return rows


def cmd_train(cfg: RunConfig, args) -> None:
    cfg = replace(cfg, mode="sfsc")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, cfg.output_dir / "config.yaml")
    result = train_sfsc(cfg)
    (cfg.output_dir / "params.txt").write_text(parameter_report(result.model) + "\n")
    print(f"checkpoint: {result.checkpoint_path}")


def cmd_train_mdma(cfg: RunConfig, args) -> None:
    cfg = replace(cfg, mode="csmdma")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, cfg.output_dir / "config.yaml")
    result = train_csmdma(cfg)
    print(f"checkpoint: {result.checkpoint_path}")


def cmd_eval(cfg: RunConfig, args) -> None:
    _sweep(cfg, _restore(cfg, args.checkpoint), "eval")


def cmd_sweep(cfg: RunConfig, args) -> None:
    if args.grid:
        cfg = replace(cfg, evaluation=replace(cfg.evaluation, grid=args.grid))
    _sweep(cfg, _restore(cfg, args.checkpoint), f"sweep_{cfg.evaluation.grid}")


def cmd_baseline(cfg: RunConfig, args) -> None:
    mode = {"tm": "tm_deepjscc", "rm": "rm_deepjscc"}[args.relay] if args.relay else cfg.mode
    if mode not in ("tm_deepjscc", "rm_deepjscc"):
        raise ConfigurationError("baseline needs --relay tm|rm or a config with a baseline mode")
    cfg = replace(cfg, mode=mode)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, cfg.output_dir / "config.yaml")
    result = train_baseline(cfg)
    _sweep(cfg, result.model, "baseline")


def cmd_diagnose(cfg: RunConfig, args) -> None:
    cfg = replace(cfg, mode="csmdma")
    model = _restore(cfg, args.checkpoint) if args.checkpoint or (cfg.output_dir / "checkpoint.pt").exists() \
        else _model_for(cfg)
    model.eval()
    data = load_data(cfg)
    images = data.test[: args.samples]
    with torch.no_grad():
        feats = model.encoder(images)
        relay = model.combiner(feats, feats.flip(0))
        idx = vq_assign(relay, model.common)
        split = pad_split(split_semantics(idx, model.common, 1), model.common, 1)
    original = feats
    for eps in args.eps:
        scaled = original + eps * (split - original) / (split - original).norm().clamp_min(1e-12) * original.norm()
        out = diagnose_superposition(model.decoder, original, scaled)
        ratio = abs(out["direct"] - out["first_order"]) / max(out["direct"], 1e-30)
        print(f"eps {eps:g}: direct {out['direct']:.6e}  first-order {out['first_order']:.6e}  rel.err {ratio:.4f}")


def cmd_report(cfg: RunConfig, args) -> None:
    rows = []
    for path in args.csv:
        rows += read_csv(path)
    files = emit_report(rows, args.out or cfg.output_dir, args.stem)
    print(json.dumps({k: str(v) for k, v in files.items()}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfsc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train the SFSC system")
    add("train-mdma", cmd_train_mdma, "train the two-user CS-MDMA system")
    p = add("eval", cmd_eval, "evaluate a checkpoint over the configured SNR points")
    p.add_argument("--checkpoint", default=None)
    p = add("sweep", cmd_sweep, "SNR sweep (diagonal or full UL x DL grid)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--grid", choices=("diagonal", "full"), default=None)
    p = add("baseline", cmd_baseline, "train and sweep an analog TM/RM baseline")
    p.add_argument("--relay", choices=("tm", "rm"), default=None)
    p = add("diagnose-superposition", cmd_diagnose, "compare direct and first-order superposition loss")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
    p = add("report", cmd_report, "merge sweep CSVs and redraw plots")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--stem", default="report")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        args.func(cfg, args)
    except (ConfigurationError, CheckpointError, CapabilityError, TrainingError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
