"""Command-line entry point wiring the pipeline end to end.

One binary with subcommands; a single JSON config document (flags override
fields, RNN_SEED overrides the seed) drives every stage.  Each stage reads and
writes only the declared file formats, embeds the config hash in its outputs
for provenance, and fails with an actionable message naming the producing
subcommand when a dependency artifact is missing.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import embeddings as em
from . import evaluation as ev
from . import features as ft
from . import model as md
from . import projection as pj
from . import testkit as tk
from . import training as tr
from .config import RunConfig, load_config
from .graph import load_graph, load_pois, save_graph, save_pois

ARTIFACTS = {
    "graph": ("graph.json", "synth or build-graph"),
    "pois": ("pois.csv", "synth or build-graph"),
    "trajectories": ("trajectories.csv", "synth"),
    "embeddings": ("embeddings.rnem", "embed"),
    "features": ("features.rnft", "featurize"),
    "segments": ("segments.tsv", "project"),
    "checkpoint": ("checkpoint.rnck", "train"),
    "normalizer": ("normalizer.rnnm", "train"),
}


class StageError(Exception):
    pass


def _path(cfg: RunConfig, key: str) -> str:
    if key == "graph":
        return cfg.paths.graph
    if key == "pois":
        return cfg.paths.pois
    if key == "trajectories":
        return cfg.paths.trajectories
    return os.path.join(cfg.paths.workdir, ARTIFACTS[key][0])


def _require(cfg: RunConfig, key: str) -> str:
    path = _path(cfg, key)
    if not os.path.exists(path):
        producer = ARTIFACTS[key][1]
        raise StageError(f"missing artifact {path}; produce it with "
                         f"`roadnext {producer}` first")
    return path


def _write_meta(cfg: RunConfig, artifact_path: str):
    """Sidecar provenance record for binary artifacts."""
    with open(artifact_path + ".meta.json", "w") as fh:
        json.dump({"config_hash": cfg.hash()}, fh, sort_keys=True)
        fh.write("\n")


def _write_csv(cfg: RunConfig, path: str, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _load_origin_graph(cfg):
    return load_graph(_require(cfg, "graph"))


# -- stages --------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args):
    spec = tk.CitySpec(rows=args.rows, cols=args.cols, edge_length=args.edge_length,
                       pois_per_category=args.pois_per_category,
                       hotspot=tuple(args.hotspot) if args.hotspot else None,
                       hotspot_fraction=args.hotspot_fraction, seed=cfg.seed)
    graph, pois = tk.gen_city(spec)
    policy = tk.WalkerPolicy(persistence=args.persistence, poi_weight=args.poi_weight,
                             noise=args.gps_noise)
    streams, _ = tk.simulate_walkers(graph, pois, policy, n_walkers=args.walkers,
                                     steps=args.steps, seed=cfg.seed)
    os.makedirs(cfg.paths.workdir, exist_ok=True)
    save_graph(graph, cfg.paths.graph)
    save_pois(pois, graph.ref_origin, cfg.paths.pois)
    pj.save_trajectories(streams, graph.ref_origin, cfg.paths.trajectories)
    for key in ("graph", "pois", "trajectories"):
        _write_meta(cfg, _path(cfg, key))
    print(f"synth: {len(graph.nodes)} nodes, {len(pois)} POIs, "
          f"{len(streams)} streams -> {cfg.paths.workdir}")


def cmd_build_graph(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    graph.validate()
    pois = load_pois(_require(cfg, "pois"), graph.ref_origin)
    n_edges = sum(len(v) for v in graph.adjacency.values()) // 2
    os.makedirs(cfg.paths.workdir, exist_ok=True)
    save_graph(graph, cfg.paths.graph)
    save_pois(pois, graph.ref_origin, cfg.paths.pois)
    for key in ("graph", "pois"):
        _write_meta(cfg, _path(cfg, key))
    print(f"build-graph: {len(graph.nodes)} nodes, {n_edges} edges, "
          f"{len(pois)} POIs validated")


def cmd_embed(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    e = cfg.embedding
    emb = em.build_embeddings(graph, dim=e.dim, p=e.p, q=e.q,
                              walk_length=e.walk_length,
                              walks_per_node=e.walks_per_node, window=e.window,
                              negatives=e.negatives, epochs=e.epochs, lr=e.lr,
                              seed=cfg.seed, workers=cfg.workers)
    out = _path(cfg, "embeddings")
    emb.save(out)
    _write_meta(cfg, out)
    print(f"embed: {len(emb.table)} nodes x {emb.dim} dims -> {out}")


def cmd_featurize(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    pois = load_pois(_require(cfg, "pois"), graph.ref_origin)
    descs = ft.build_descriptors(graph, pois, radius=cfg.features.radius,
                                 n_sectors=cfg.features.sectors,
                                 n_categories=len(cfg.features.categories),
                                 workers=cfg.workers)
    out = _path(cfg, "features")
    ft.save_descriptors(descs, cfg.features.sectors,
                        len(cfg.features.categories), out)
    _write_meta(cfg, out)
    print(f"featurize: {len(descs)} descriptors "
          f"(dim {ft.descriptor_dim(cfg.features.sectors, len(cfg.features.categories))}) -> {out}")


def cmd_project(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    streams = pj.load_trajectories(_require(cfg, "trajectories"), graph.ref_origin)
    p = cfg.projection
    sequences = pj.project_pipeline(streams, graph, search_radius=p.search_radius,
                                    buffer_cap=p.buffer_cap, buffer_frac=p.buffer_frac,
                                    margin=p.margin, v_max=p.v_max)
    segments = []
    for seq in sequences:
        segments.extend(pj.segment_stream(seq, windows=p.windows))
    out = _path(cfg, "segments")
    pj.save_segments(segments, out)
    _write_meta(cfg, out)
    print(f"project: {len(streams)} streams -> {len(segments)} segments -> {out}")


def _load_examples(cfg, graph):
    segments = pj.load_segments(_require(cfg, "segments"))
    examples = [pj.build_example(s, graph) for s in segments]
    if not examples:
        raise StageError("no usable examples; check projection inputs")
    return examples


def _load_store(cfg, require_normalizer=True):
    descs, S, C = ft.load_descriptors(_require(cfg, "features"))
    if S != cfg.features.sectors or C != len(cfg.features.categories):
        raise StageError(f"feature cache was built with S={S}, |C|={C}; config "
                         f"says S={cfg.features.sectors}, "
                         f"|C|={len(cfg.features.categories)} — rerun `roadnext featurize`")
    emb = em.StructEmbeddings.load(_require(cfg, "embeddings"))
    if require_normalizer:
        norm = ft.Normalizer.load(_require(cfg, "normalizer"))
    else:
        norm = None
    return descs, emb, norm


def cmd_train(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    descs, emb, _ = _load_store(cfg, require_normalizer=False)
    examples = _load_examples(cfg, graph)
    split = tr.split_dataset(examples, ratios=cfg.training.ratios, seed=cfg.seed)
    norm = ft.Normalizer.fit([descs[n] for n in sorted(tr.train_nodes(split.train))])
    store = md.FeatureStore(descs, norm, emb)
    logs_out = []

    def log_fn(log):
        logs_out.append(log)
        print(f"epoch {log.epoch}: loss {log.train_loss:.4f} "
              f"val acc@1 {log.val_acc1:.4f} ({log.seconds:.1f}s)")

    _, best, _ = tr.train(split.train, split.val, cfg.model, store, graph,
                          epochs=cfg.training.epochs,
                          batch_size=cfg.training.batch_size,
                          lr=cfg.training.lr, seed=cfg.seed, log_fn=log_fn)
    ckpt = _path(cfg, "checkpoint")
    md.save_checkpoint(best, cfg.model, ckpt)
    _write_meta(cfg, ckpt)
    norm_path = _path(cfg, "normalizer")
    norm.save(norm_path)
    _write_meta(cfg, norm_path)
    _write_csv(cfg, os.path.join(cfg.paths.workdir, "training_log.csv"),
               ["epoch", "train_loss", "val_acc1", "val_mrr", "seconds"],
               [[l.epoch, repr(l.train_loss), repr(l.val_acc1), repr(l.val_mrr),
                 f"{l.seconds:.3f}"] for l in logs_out])
    print(f"train: checkpoint ({md.param_count(best)} params) -> {ckpt}")


def _eval_setup(cfg):
    graph = _load_origin_graph(cfg)
    params, model_cfg = md.load_checkpoint(_require(cfg, "checkpoint"))
    descs, emb, norm = _load_store(cfg)
    store = md.FeatureStore(descs, norm, emb)
    examples = _load_examples(cfg, graph)
    split = tr.split_dataset(examples, ratios=cfg.training.ratios, seed=cfg.seed)
    return graph, params, model_cfg, store, split


def cmd_eval(cfg: RunConfig, args):
    graph, params, model_cfg, store, split = _eval_setup(cfg)
    examples = getattr(split, args.split)
    report = ev.evaluate(examples, params, model_cfg, store, graph)
    doc = {"config_hash": cfg.hash(), "split": args.split, "n": report.n,
           "mean_auc": report.mean_auc,
           "overall": {"acc1": report.acc1, "acc3": report.acc3,
                       "acc5": report.acc5, "mrr": report.mrr},
           "cohorts": report.cohorts}
    out = os.path.join(cfg.paths.workdir, "metrics.json")
    blob = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    with open(out, "w") as fh:
        fh.write(blob)
    rows = [["overall", report.acc1, report.acc3, report.acc5, report.mrr, report.n]]
    for scale in ev.SCALES:
        if scale in report.cohorts:
            c = report.cohorts[scale]
            rows.append([scale, c["acc1"], c["acc3"], c["acc5"], c["mrr"], c["n"]])
    _write_csv(cfg, os.path.join(cfg.paths.workdir, "metrics_table.csv"),
               ["cohort", "acc1", "acc3", "acc5", "mrr", "n"],
               [[r[0]] + [repr(v) if isinstance(v, float) else v for v in r[1:]]
                for r in rows])
    sys.stdout.write(blob)


def cmd_robustness(cfg: RunConfig, args):
    graph, params, model_cfg, store, split = _eval_setup(cfg)
    if args.kind == "poi":
        rows = ev.robustness_poi(split.test, params, model_cfg, store, graph,
                                 levels=ev.POI_LEVELS, trials=args.trials,
                                 n_sectors=cfg.features.sectors,
                                 n_categories=len(cfg.features.categories),
                                 seed=cfg.seed)
    else:
        streams = pj.load_trajectories(_require(cfg, "trajectories"), graph.ref_origin)
        p = cfg.projection

        def project_fn(perturbed):
            seqs = pj.project_pipeline(perturbed, graph,
                                       search_radius=p.search_radius,
                                       buffer_cap=p.buffer_cap,
                                       buffer_frac=p.buffer_frac,
                                       margin=p.margin, v_max=p.v_max)
            return pj.examples_from_sequences(seqs, graph, windows=p.windows)

        def split_fn(examples):
            return tr.split_dataset(examples, ratios=cfg.training.ratios,
                                    seed=cfg.seed).test

        rows = ev.robustness_coordinate(streams, params, model_cfg, store, graph,
                                        project_fn, split_fn,
                                        levels=ev.COORD_LEVELS,
                                        trials=args.trials, seed=cfg.seed)
    out = os.path.join(cfg.paths.workdir, f"robustness_{args.kind}.csv")
    _write_csv(cfg, out, ["kind", "level", "trial", "acc1", "acc3", "acc5", "mrr"],
               [[k, repr(float(lv)), t, repr(a1), repr(a3), repr(a5), repr(m)]
                for k, lv, t, a1, a3, a5, m in rows])
    print(f"robustness: {len(rows)} rows -> {out}")


def _train_eval_factory(cfg, graph, descs, emb, examples):
    """Shared train-then-score closure for ablation and sweep runs."""
    split = tr.split_dataset(examples, ratios=cfg.training.ratios, seed=cfg.seed)
    norm = ft.Normalizer.fit([descs[n] for n in sorted(tr.train_nodes(split.train))])
    store = md.FeatureStore(descs, norm, emb)

    def train_fn(model_cfg):
        _, best, _ = tr.train(split.train, split.val, model_cfg, store, graph,
                              epochs=cfg.training.epochs,
                              batch_size=cfg.training.batch_size,
                              lr=cfg.training.lr, seed=cfg.seed)
        return best

    def eval_fn(params, model_cfg):
        return ev.evaluate(split.test, params, model_cfg, store, graph)

    def val_acc1_fn(model_cfg):
        params = train_fn(model_cfg)
        acc1, _ = tr.evaluate_ranking(split.val, params, model_cfg, store, graph)
        return acc1

    return train_fn, eval_fn, val_acc1_fn


def cmd_ablate(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    descs, emb, _ = _load_store(cfg, require_normalizer=False)
    examples = _load_examples(cfg, graph)
    train_fn, eval_fn, _ = _train_eval_factory(cfg, graph, descs, emb, examples)
    rows = []
    if args.mode == "flags":
        flag_rows = [()] + [(f,) for f in ev.ABLATION_FLAGS]
        for flags, rep in ev.run_ablation(cfg.model, flag_rows, train_fn, eval_fn):
            rows.append(["+".join(flags) or "baseline", repr(rep.acc1),
                         repr(rep.acc3), repr(rep.acc5), repr(rep.mrr), rep.n])
    else:  # layer split grid of the 4-layer stack
        for mc in ev.layer_split_configs(cfg.model):
            rep = eval_fn(train_fn(mc), mc)
            rows.append([f"L_std={mc.layers_std},L_rel={mc.layers_rel}",
                         repr(rep.acc1), repr(rep.acc3), repr(rep.acc5),
                         repr(rep.mrr), rep.n])
    out = os.path.join(cfg.paths.workdir, "ablation.csv")
    _write_csv(cfg, out, ["variant", "acc1", "acc3", "acc5", "mrr", "n"], rows)
    print(f"ablate: {len(rows)} rows -> {out}")


def cmd_sweep(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    descs, emb, _ = _load_store(cfg, require_normalizer=False)
    examples = _load_examples(cfg, graph)
    _, _, val_acc1_fn = _train_eval_factory(cfg, graph, descs, emb, examples)
    rows = ev.sweep_lh(cfg.model, val_acc1_fn)
    out = os.path.join(cfg.paths.workdir, "sweep.csv")
    _write_csv(cfg, out, ["L", "H", "val_acc1"],
               [[r["L"], r["H"], repr(r["val_acc1"])] for r in rows])
    print(f"sweep: {len(rows)} rows -> {out}")


def cmd_coverage(cfg: RunConfig, args):
    graph = _load_origin_graph(cfg)
    pois = load_pois(_require(cfg, "pois"), graph.ref_origin)
    radii = sorted(args.radii)
    rows = ft.coverage_report(graph, pois, radii)
    out = os.path.join(cfg.paths.workdir, "coverage.csv")
    _write_csv(cfg, out,
               ["radius", "coverage", "duplicate", "avg_nodes", "marginal_gain"],
               [[repr(float(r["R"])), repr(r["coverage"]), repr(r["duplicate"]),
                 repr(r["avg_nodes"]), repr(r["marginal_gain"])] for r in rows])
    print(f"coverage: {len(rows)} rows -> {out}")


COMMANDS = {
    "synth": cmd_synth,
    "build-graph": cmd_build_graph,
    "embed": cmd_embed,
    "featurize": cmd_featurize,
    "project": cmd_project,
    "train": cmd_train,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "coverage": cmd_coverage,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadnext",
        description="Road-node next-step prediction pipeline: graph ingestion, "
                    "feature building, GPS projection, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--workdir", help="artifact directory (overrides config)")
        p.add_argument("--seed", type=int, help="global seed (RNN_SEED env wins)")
        p.add_argument("--workers", type=int,
                       help="pipeline parallelism; any N reproduces N=1 outputs")

    p = sub.add_parser("synth", help="generate a synthetic city and GPS streams")
    common(p)
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--cols", type=int, default=20)
    p.add_argument("--edge-length", type=float, default=200.0)
    p.add_argument("--pois-per-category", type=float, default=30.0)
    p.add_argument("--hotspot", type=float, nargs=3, metavar=("X", "Y", "SIGMA"))
    p.add_argument("--hotspot-fraction", type=float, default=0.0)
    p.add_argument("--walkers", type=int, default=100)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--persistence", type=float, default=0.8)
    p.add_argument("--poi-weight", type=float, default=0.0)
    p.add_argument("--gps-noise", type=float, default=2.0)

    for name, help_text in [
        ("build-graph", "validate and canonicalize graph + POI inputs"),
        ("embed", "train structural node embeddings"),
        ("featurize", "build sector POI descriptors"),
        ("project", "project GPS streams onto the graph and segment them"),
        ("train", "train the next-step model"),
    ]:
        p = sub.add_parser(name, help=help_text)
        common(p)

    p = sub.add_parser("eval", help="score a split and emit metrics JSON/CSV")
    common(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("robustness", help="perturbation sensitivity harness")
    common(p)
    p.add_argument("--kind", choices=("coordinate", "poi"), required=True)
    p.add_argument("--trials", type=int, default=10)

    p = sub.add_parser("ablate", help="branch-removal and layer-split tables")
    common(p)
    p.add_argument("--mode", choices=("flags", "layers"), default="flags")

    p = sub.add_parser("sweep", help="depth x heads sensitivity grid")
    common(p)

    p = sub.add_parser("coverage", help="POI coverage vs radius report")
    common(p)
    p.add_argument("--radii", type=float, nargs="+",
                   default=[50.0, 100.0, 150.0, 200.0, 300.0])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {"seed": args.seed, "workers": args.workers}
    if args.workdir is not None:
        overrides["paths.workdir"] = args.workdir
        default = RunConfig()
        for key in ("graph", "pois", "trajectories"):
            overrides[f"paths.{key}"] = os.path.join(
                args.workdir, os.path.basename(getattr(default.paths, key)))
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
