"""Command-line entry point: ``shiftadd <command> [options]``.

Exit codes: 0 success, 2 usage, 3 configuration/geometry, 4 data,
5 checkpoint integrity, 6 numerical failure, 1 anything else.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .add import add_prune
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_arch, load_mapping
from .curves import emit_curves
from .data import load_dataset
from .energy import estimate_energy
from .errors import ConfigError, DataError, ShiftAddError
from .network import build_model
from .quant import PRECISIONS
from .shift import shift_prune
from .train import PruneEvent, TrainConfig, Trainer, TrainRecord, evaluate

log = logging.getLogger("shiftadd")

ENERGY_FORMAT = {"fp32": "FP32", "fix32": "FIX32", "fix16": "FIX16", "fix8": "FIX8"}


def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="master seed (default 0)")
    parser.add_argument("--precision", choices=sorted(PRECISIONS), default=d, help="arithmetic mode")
    parser.add_argument("--platform", choices=["asic", "fpga"], default=d, help="energy table platform (default asic)")
    parser.add_argument("--config", default=d, help="YAML/JSON experiment config; flags override its keys")
    parser.add_argument("-v", "--verbose", action="count", default=d)


def build_parser():
    p = argparse.ArgumentParser(prog="shiftadd", description="ShiftAdd networks: train, evaluate, estimate energy.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model and write records + checkpoint")
    t.add_argument("--arch", help="architecture file or zoo name (default shiftadd3)")
    t.add_argument("--data", help="dataset file or synth:... spec (default synth:blobs)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float, help="base learning rate")
    t.add_argument("--freeze-shift", action="store_true", default=None)
    t.add_argument("--prune", action="append", default=None, metavar="TARGET:RATIO@EPOCH[:POLICY]",
                   help="scheduled pruning event, e.g. add:0.5@10:magnitude (repeatable)")
    t.add_argument("--resume", help="continue from a checkpoint written by train")
    t.add_argument("--checkpoint-every", type=int, default=0, help="also save out/epoch<N>.ckpt every N epochs")
    t.add_argument("--out", help="output directory (default runs/<run id>)")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--data", help="dataset (default: the one recorded in the checkpoint's run, else synth:blobs)")
    e.add_argument("--split", choices=["test", "train", "all"], default="test")

    en = sub.add_parser("energy", parents=[common], help="per-layer energy estimate")
    src = en.add_mutually_exclusive_group()
    src.add_argument("--arch", help="architecture file or zoo name (default shiftadd3)")
    src.add_argument("--checkpoint", help="use a trained (possibly pruned/frozen) model")
    en.add_argument("--phase", choices=["inference", "train"], default="inference")
    en.add_argument("--steps", type=int, default=1)
    en.add_argument("--batch-size", type=int, default=1)
    en.add_argument("--freeze-shift", action="store_true")
    en.add_argument("--csv", help="also write the table to this delimiter-separated file")

    pr = sub.add_parser("prune", parents=[common], help="prune a checkpoint's shift or add layers")
    pr.add_argument("checkpoint")
    pr.add_argument("--target", choices=["shift", "add"], required=True)
    pr.add_argument("--ratio", type=float, required=True)
    pr.add_argument("--policy", choices=["magnitude", "random"], default="magnitude")
    pr.add_argument("--out", required=True, help="path of the pruned checkpoint")

    pl = sub.add_parser("plot", parents=[common], help="CSV + SVG curves from record files")
    pl.add_argument("records", nargs="+", help="records.jsonl files (or run directories)")
    pl.add_argument("--out", required=True)
    pl.add_argument("--name", default="comparison")

    ic = sub.add_parser("inspect-checkpoint", parents=[common], help="describe a checkpoint")
    ic.add_argument("checkpoint")
    ic.add_argument("--json", action="store_true", help="machine-readable output")
    return p


def _settings(args):
    """Merge --config file values under explicit flags."""
    cfg = load_mapping(args.config) if getattr(args, "config", None) else {}
    known = {"arch", "data", "train", "seed", "precision", "platform", "out"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed {sorted(known)}")
    s = {"seed": 0, "precision": None, "platform": "asic", "arch": "shiftadd3", "data": "synth:blobs",
         "train": {}, "out": None}
    s.update(cfg)
    for key in ("seed", "precision", "platform", "arch", "data", "out"):
        v = getattr(args, key, None)
        if v is not None:
            s[key] = v
    return s


def _parse_prune(item):
    try:
        target, rest = item.split(":", 1)
        ratio, _, rest = rest.partition("@")
        epoch, _, policy = rest.partition(":")
        return PruneEvent(int(epoch or 0), target, float(ratio), policy or "magnitude")
    except ValueError:
        raise ConfigError(f"bad --prune {item!r}; expected TARGET:RATIO@EPOCH[:POLICY]") from None


def cmd_train(args, s):
    tr = dict(s["train"])
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "base_lr"),
                      ("freeze_shift", "freeze_shift")):
        v = getattr(args, flag)
        if v is not None:
            tr[key] = v
    if args.prune:
        tr["prune_schedule"] = [_parse_prune(x) for x in args.prune]
    tr["seed"] = s["seed"]
    tr["platform"] = s["platform"]
    if s["precision"]:
        tr["precision"] = s["precision"]
    dataset = load_dataset(s["data"])
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.trainer is None:
            raise ConfigError(f"{args.resume} holds no training state")
        trainer = ck.trainer
        if "epochs" in tr:
            trainer.cfg.epochs = tr["epochs"]
        run_id = trainer.record.run_id
    else:
        arch = load_arch(s["arch"])
        cfg = TrainConfig.from_dict(tr)
        model = build_model(arch, seed=s["seed"], precision=cfg.precision)
        trainer = Trainer(model, cfg)
        arch_name = s["arch"] if isinstance(s["arch"], str) else "arch"
        arch_name = Path(arch_name).stem if arch_name.endswith((".yaml", ".yml", ".json")) else arch_name
        run_id = f"{arch_name}-{cfg.precision}{'-frozen' if cfg.freeze_shift else ''}-s{s['seed']}"
        trainer.record.meta.update(run_id=run_id, data=s["data"])
    if tuple(trainer.model.input_shape) != tuple(dataset.sample_shape):
        raise ConfigError(f"data sample shape {dataset.sample_shape} does not match model input "
                          f"{tuple(trainer.model.input_shape)}")
    out = Path(s["out"] or Path("runs") / run_id)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"run_id": run_id, "model_seed": trainer.model.seed, "train_seed": trainer.cfg.seed,
                "shuffle_seed_sequence": [trainer.cfg.seed, 1], "data": s["data"], "dataset": dataset.name,
                "config_hash": trainer.cfg.digest(), "train_config": trainer.cfg.to_dict(),
                "arch": trainer.model.arch.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def on_epoch(tr_, row):
        print(f"epoch {row['epoch']:3d}  lr {row['lr']:.4g}  loss {row['train_loss']:.4f}  "
              f"train_acc {row['train_acc']:.4f}  test_acc {row.get('test_acc', float('nan')):.4f}  "
              f"energy {row['energy_j']:.4e} J", flush=True)
        (out / "records.jsonl").write_text(tr_.record.to_jsonl())
        if args.checkpoint_every and tr_.epoch % args.checkpoint_every == 0:
            save_checkpoint(out / f"epoch{tr_.epoch}.ckpt", tr_.model, tr_)

    trainer.run(dataset, on_epoch=on_epoch)
    (out / "records.jsonl").write_text(trainer.record.to_jsonl())
    save_checkpoint(out / "checkpoint.ckpt", trainer.model, trainer)
    print(f"wrote {out / 'records.jsonl'}, {out / 'checkpoint.ckpt'}, {out / 'manifest.json'}")
    return 0


def cmd_eval(args, s):
    ck = load_checkpoint(args.checkpoint)
    model = ck.model
    if s["precision"]:
        model.set_precision(s["precision"])
    data = args.data or (ck.record.meta.get("data") if ck.record else None) or s["data"]
    ds = load_dataset(data)
    part = {"test": ds.test_split, "train": ds.train_split, "all": lambda: ds}[args.split]()
    if len(part) == 0:
        raise ConfigError(f"dataset {ds.name} has an empty {args.split} split")
    loss, acc = evaluate(model, part)
    print(json.dumps({"checkpoint": str(args.checkpoint), "data": data, "split": args.split, "samples": len(part),
                      "precision": model.precision, "loss": loss, "accuracy": acc}))
    return 0


def cmd_energy(args, s):
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
    else:
        model = build_model(load_arch(s["arch"]), seed=s["seed"])
    if args.freeze_shift:
        for _, layer in model.layers_of("shift"):
            layer.weights.frozen = True
    fmt = ENERGY_FORMAT[s["precision"] or "fix32"]
    phases = ("forward",) if args.phase == "inference" else ("forward", "backward", "update")
    rep = estimate_energy(model, phases, fmt, s["platform"], steps=args.steps, batch_size=args.batch_size)
    print(rep.to_text())
    if args.csv:
        rep.to_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_prune(args, s):
    ck = load_checkpoint(args.checkpoint)
    layers = ck.model.layers_of(args.target)
    if not layers:
        raise ConfigError(f"model has no {args.target} layers")
    for i, layer in layers:
        if args.target == "shift":
            layer.weights = shift_prune(layer.weights, args.ratio, s["seed"] * 1000 + i)
        else:
            layer.weights = add_prune(layer.weights, args.ratio, args.policy, s["seed"] * 1000 + i)
    ck.model.bump()
    save_checkpoint(args.out, ck.model, ck.trainer)
    print(ck.model.summary())
    print(f"wrote {args.out}")
    return 0


def cmd_plot(args, s):
    records = []
    for src in args.records:
        p = Path(src)
        if p.is_dir():
            p = p / "records.jsonl"
        try:
            text = p.read_text()
        except OSError as exc:
            raise DataError(f"cannot read records {p}: {exc}") from None
        rec = TrainRecord.from_jsonl(text)
        if not rec.run_id:
            rec.meta["run_id"] = p.parent.name if p.name == "records.jsonl" else p.stem
        records.append(rec)
    for path in emit_curves(records, args.out, args.name):
        print(f"wrote {path}")
    return 0


def cmd_inspect(args, s):
    ck = load_checkpoint(args.checkpoint)
    m = ck.model
    info = {"arch": m.arch.to_dict(), "model_seed": m.seed, "precision": m.precision,
            "param_count": m.param_count(), "param_bytes": m.param_bytes(), "epoch": ck.epoch,
            "has_train_state": ck.trainer is not None}
    if ck.record is not None:
        info["train_config"] = ck.config.to_dict()
        info["record_meta"] = ck.record.meta
        info["last_epoch"] = ck.record.epochs[-1] if ck.record.epochs else None
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        print(m.summary())
        print(f"epoch {ck.epoch}  training state {'yes' if ck.trainer else 'no'}")
        if info.get("last_epoch"):
            print("last epoch " + json.dumps(info["last_epoch"], sort_keys=True))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "energy": cmd_energy, "prune": cmd_prune, "plot": cmd_plot,
            "inspect-checkpoint": cmd_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose or 0, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, _settings(args))
    except ShiftAddError as exc:
        print(f"shiftadd: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
