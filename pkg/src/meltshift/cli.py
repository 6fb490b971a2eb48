"""Command-line surface for the pipeline.

Subcommands: ``prepare-split``, ``synth-embed``, ``train``, ``eval``,
``predict``, ``gradcheck``. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numeric error. Every artifact-producing command also
writes a run manifest (command, option hash, input digests, tool version,
timestamp) next to its output; the manifest is provenance metadata and is
the one output that is not byte-reproducible (it carries a timestamp).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import canonical_json, load_checkpoint, sha256_hex
from .data import (
    EmbeddingBundle,
    load_dataset,
    parse_mutation,
    read_bundles,
    synth_bundles,
    write_bundles,
)
from .errors import ConfigError, DataError, MeltshiftError, NumericError
from .gradcheck import GRAD_TOLERANCE, check_model
from .heads import HeadKind, build_model
from .metrics import format_report
from .splitter import load_clusters_tsv, read_split, split_clusters, \
    split_records, write_split
from .trainer import TrainConfig, evaluate, train

HEAD_CHOICES = ["ensemble"] + [k.value for k in HeadKind]


def _file_digest(path) -> str:
    return sha256_hex(Path(path).read_bytes())


def _write_manifest(out_path, command: str, options: dict,
                    inputs: list) -> None:
    manifest = {
        "command": command,
        "config_hash": sha256_hex(canonical_json(options)),
        "inputs": {str(p): _file_digest(p) for p in inputs},
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    Path(out_path).write_text(json.dumps(manifest, sort_keys=True, indent=2)
                              + "\n")


def _parse_ratio(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"ratio must look like 8:2, got {text!r}")
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"ratio must be integers, got {text!r}") from None
    if a <= 0 or b <= 0:
        raise ConfigError(f"ratio parts must be positive, got {text!r}")
    return a, b


def _parse_tracks(text: str) -> tuple[str, ...]:
    mapping = {"seq": ("seq",), "seq+struct": ("seq", "struct")}
    if text not in mapping:
        raise ConfigError(f"tracks must be 'seq' or 'seq+struct', got {text!r}")
    return mapping[text]


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare_split(args) -> int:
    records = load_dataset(args.dataset)
    ratio = _parse_ratio(args.ratio)
    if args.clusters_tsv:
        clusters = load_clusters_tsv(args.clusters_tsv)
        known = {m for c in clusters for m in c.members}
        missing = sorted({r.protein_id for r in records} - known)
        if missing:
            raise DataError(f"cluster table lacks proteins: {missing[:5]}")
        counts: dict[str, int] = {}
        for r in records:
            counts[r.protein_id] = counts.get(r.protein_id, 0) + 1
        split = split_clusters(clusters, ratio, args.seed, counts, args.identity)
    else:
        split = split_records(records, args.identity, ratio, args.seed, args.kmer)
    write_split(args.out, split)
    n_train = len(split.side("train"))
    n_val = len(split.side("val"))
    print(f"wrote {args.out}: {n_train} train / {n_val} val proteins")
    inputs = [args.dataset] + ([args.clusters_tsv] if args.clusters_tsv else [])
    _write_manifest(str(args.out) + ".manifest.json", "prepare-split",
                    {"identity": args.identity, "ratio": list(ratio),
                     "seed": args.seed, "kmer": args.kmer}, inputs)
    return 0


def cmd_synth_embed(args) -> int:
    if args.d_raw < 1:
        raise ConfigError(f"--d-raw must be >= 1, got {args.d_raw}")
    records = load_dataset(args.dataset)
    modalities = _parse_tracks(args.tracks)
    bundles = synth_bundles(records, args.d_raw, args.seed, modalities)
    write_bundles(args.out, bundles)
    print(f"wrote {args.out}: {len(bundles)} bundles, d_raw={args.d_raw}")
    _write_manifest(str(args.out) + ".manifest.json", "synth-embed",
                    {"d_raw": args.d_raw, "seed": args.seed,
                     "tracks": args.tracks}, [args.dataset])
    return 0


def _load_train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    overrides = {
        "max_lr": args.max_lr, "epochs": args.epochs,
        "batch_size": args.batch_size, "seed": args.seed,
        "d_proj": args.d_proj, "head": args.head,
        "clip_max_norm": args.clip_norm,
    }
    if args.tracks is not None:
        overrides["modalities"] = list(_parse_tracks(args.tracks))
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return TrainConfig.from_dict(base)


def _write_eval_outputs(result, report_path, rows_path) -> None:
    if report_path:
        Path(report_path).write_text(
            json.dumps(result.report.to_dict(), sort_keys=True, indent=2) + "\n")
    if rows_path:
        with open(rows_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["protein_id", "mutation", "label", "y1", "y2",
                             "y_ens"])
            for row in result.rows:
                writer.writerow([row.protein_id, row.mutation, repr(row.label),
                                 repr(row.y1), repr(row.y2), repr(row.y_ens)])


def cmd_train(args) -> int:
    config = _load_train_config(args)
    records = load_dataset(args.dataset)
    bundles = read_bundles(args.bundles)
    split = read_split(args.split) if args.split else None
    if args.final_retrain:
        split = None  # retrain on everything after model selection
    rundir = Path(args.out)
    rundir.mkdir(parents=True, exist_ok=True)
    (rundir / "config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
    if args.split:
        (rundir / "split.csv").write_bytes(Path(args.split).read_bytes())

    result = train(records, bundles, config, split,
                   checkpoint_path=rundir / "checkpoint.bin")
    history = [e.to_dict() for e in result.history]
    (rundir / "history.json").write_text(
        json.dumps(history, sort_keys=True, indent=2) + "\n")

    final = result.history[-1]
    print(f"trained {config.head}: {result.steps} steps, "
          f"final train loss {final.losses.l_total:.6f}")
    if result.val_ids:
        val_records = [r for r in records if r.protein_id in set(result.val_ids)]
        ev = evaluate(result.model, val_records, bundles)
        _write_eval_outputs(ev, rundir / "eval.json",
                            rundir / "predictions.csv")
        print(format_report(ev.report))

    inputs = [args.dataset, args.bundles] + ([args.split] if args.split else [])
    if args.config:
        inputs.append(args.config)
    _write_manifest(rundir / "run_manifest.json", "train",
                    config.to_dict(), inputs)
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    records = load_dataset(args.dataset)
    bundles = read_bundles(args.bundles)
    result = evaluate(ckpt.model, records, bundles)
    print(format_report(result.report))
    if result.skipped:
        print(f"skipped {len(result.skipped)} variant(s) with missing bundles",
              file=sys.stderr)
    _write_eval_outputs(result, args.out, args.per_sample)
    if args.out:
        _write_manifest(str(args.out) + ".manifest.json", "eval", {},
                        [args.checkpoint, args.dataset, args.bundles])
    return 0


def _parse_mutation_specs(args) -> list[tuple[str, str]]:
    specs: list[str] = []
    if args.mutations:
        specs.extend(s for s in args.mutations.split(",") if s)
    if args.mutations_file:
        with open(args.mutations_file) as fh:
            specs.extend(line.strip() for line in fh if line.strip())
    if not specs:
        raise ConfigError("no mutations given: use --mutations or --mutations-file")
    out = []
    for spec in specs:
        if ":" not in spec:
            raise ConfigError(f"mutation spec must be PROTEIN:CODE, got {spec!r}")
        pid, code = spec.split(":", 1)
        parse_mutation(code)  # validate the code early
        out.append((pid, code))
    return out


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    bundles = read_bundles(args.bundles)
    pairs = _parse_mutation_specs(args)
    writer = csv.writer(sys.stdout)
    writer.writerow(["protein_id", "mutation", "y1", "y2", "y_ens"])
    for pid, code in pairs:
        wt_id, mut_id = f"{pid}:WT", f"{pid}:{code}"
        for vid in (wt_id, mut_id):
            if vid not in bundles:
                raise DataError(f"no bundle for variant {vid}")
        bw, bm = bundles[wt_id], bundles[mut_id]
        if ckpt.model.kind_name == "ensemble":
            y1, y2, y_ens = ckpt.model.predict(bw, bm)
        else:
            y1 = y2 = y_ens = ckpt.model.predict(bw, bm)
        writer.writerow([pid, code, repr(y1), repr(y2), repr(y_ens)])
    return 0


def _random_gradcheck_bundle(vid: str, d_raw: int,
                             rng: np.random.Generator) -> EmbeddingBundle:
    roles = ("seq_cls", "seq_pos", "struct_cls", "struct_pos", "avg")
    return EmbeddingBundle(vid, {r: rng.normal(size=d_raw) for r in roles})


def cmd_gradcheck(args) -> int:
    if args.d < 1:
        raise ConfigError(f"--d must be >= 1, got {args.d}")
    d_raw = args.d_raw if args.d_raw else args.d + 3
    worst = None
    for seed in range(args.seed, args.seed + args.seeds):
        model = build_model(args.head, d_raw, args.d, seed)
        rng = np.random.default_rng(seed + 10_000)
        samples = [
            (_random_gradcheck_bundle(f"G{i}:WT", d_raw, rng),
             _random_gradcheck_bundle(f"G{i}:M", d_raw, rng),
             float(rng.normal()))
            for i in range(args.batch)
        ]
        result = check_model(model, samples, step=args.step)
        if worst is None or result.max_rel_err > worst.max_rel_err:
            worst = result
        print(f"head={args.head} d={args.d} seed={seed} "
              f"max_rel_err={result.max_rel_err:.3e} "
              f"worst={result.worst_param}{list(result.worst_index)} "
              f"({result.n_checked} values)")
    if worst.max_rel_err >= GRAD_TOLERANCE:
        raise NumericError(
            f"gradient check failed: {worst.max_rel_err:.3e} >= "
            f"{GRAD_TOLERANCE:.0e} at {worst.worst_param}"
        )
    print(f"gradcheck OK: max relative error {worst.max_rel_err:.3e}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meltshift",
        description="Mutation melting-temperature shift prediction pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-split",
                       help="homology-aware train/val split manifest")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--identity", type=float, default=0.5)
    p.add_argument("--ratio", default="8:2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kmer", type=int, default=5)
    p.add_argument("--clusters-tsv",
                   help="import externally computed clusters instead")
    p.set_defaults(func=cmd_prepare_split)

    p = sub.add_parser("synth-embed",
                       help="deterministic synthetic embedding bundles")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--d-raw", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tracks", default="seq", choices=["seq", "seq+struct"])
    p.set_defaults(func=cmd_synth_embed)

    p = sub.add_parser("train", help="train a model into a run directory")
    p.add_argument("dataset")
    p.add_argument("bundles")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--split", help="split manifest from prepare-split")
    p.add_argument("--config", help="JSON config file (flags win)")
    p.add_argument("--head", choices=HEAD_CHOICES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-lr", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-proj", type=int)
    p.add_argument("--tracks", choices=["seq", "seq+struct"])
    p.add_argument("--final-retrain", action="store_true",
                   help="train on train+val after model selection")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("bundles")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--per-sample", help="per-sample predictions CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict listed mutations")
    p.add_argument("checkpoint")
    p.add_argument("bundles")
    p.add_argument("--mutations", help="comma list of PROTEIN:CODE specs")
    p.add_argument("--mutations-file", help="file with one PROTEIN:CODE per line")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="verify analytic gradients against finite differences")
    p.add_argument("--head", default="ensemble", choices=HEAD_CHOICES)
    p.add_argument("--d", type=int, default=8, help="projection width")
    p.add_argument("--d-raw", type=int, help="raw width (default d+3)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--step", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MeltshiftError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
