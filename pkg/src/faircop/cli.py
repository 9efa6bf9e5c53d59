"""Command-line front door: synthesize corpora, simulate, run experiments,
compute metrics, pretrain projection networks, serve sessions over HTTP.

Every subcommand is byte-reproducible for fixed flags and seeds: diagnostics
go to stderr, data to stdout or --out.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics as metrics_mod
from . import network, service, simulator
from .corpus import (Corpus, CorpusError, SynthConfig, load_corpus,
                     save_corpus, synthesize_corpus)
from .engine import ALGORITHMS, EngineConfig


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _parse_views_spec(spec: str) -> list[tuple[str, int, float]]:
    """name:dim:sigma triples separated by commas."""
    views = []
    for chunk in spec.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 3:
            raise _fail(f"bad view spec {chunk!r}; expected name:dim:sigma")
        views.append((parts[0], int(parts[1]), float(parts[2])))
    return views


def _parse_weights(spec: str) -> dict[str, float]:
    """name=weight pairs separated by commas; bare names mean weight 1."""
    weights = {}
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" in chunk:
            name, value = chunk.split("=", 1)
            weights[name.strip()] = float(value)
        else:
            weights[chunk] = 1.0
    if not weights:
        raise _fail(f"no view weights in {spec!r}")
    return weights


def _parse_combos(spec: str) -> list[dict[str, float]]:
    """Combos separated by ';', views within a combo joined by '+'."""
    combos = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        combos.append(_parse_weights(chunk.replace("+", ",")))
    if not combos:
        raise _fail(f"no view combos in {spec!r}")
    return combos


def _load_array(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    return np.loadtxt(p, delimiter=",", ndmin=2)


@click.group()
def main() -> None:
    """Personalized image retrieval toolkit."""


@main.command()
@click.option("--n", type=int, required=True, help="Number of records.")
@click.option("--schema", "schema_path", required=True,
              help="JSON file mapping attribute name to class count.")
@click.option("--views", "views_spec", default="hog:64:0.1,facenet:32:0.1,mix:32:0.1",
              show_default=True, help="Comma-separated name:dim:sigma triples.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--prototype-scale", type=float, default=1.0, show_default=True)
@click.option("--sensitive", default=None,
              help="Comma-separated sensitive attribute names.")
@click.option("--out", "out_dir", required=True, help="Output corpus directory.")
def synth(n, schema_path, views_spec, seed, prototype_scale, sensitive, out_dir):
    """Synthesize a corpus with attribute-aligned embedding views."""
    try:
        schema = json.loads(Path(schema_path).read_text())
        cfg = SynthConfig(
            n=n, schema={k: int(v) for k, v in schema.items()},
            views=_parse_views_spec(views_spec), seed=seed,
            prototype_scale=prototype_scale,
            sensitive_attributes=sensitive.split(",") if sensitive else None)
        corpus = synthesize_corpus(cfg)
        manifest = save_corpus(corpus, out_dir)
    except (OSError, ValueError, CorpusError) as exc:
        raise _fail(str(exc)) from exc
    click.echo(str(manifest))


@main.command()
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--algorithm", type=click.Choice(ALGORITHMS), default="faircop",
              show_default=True)
@click.option("--weights", default=None,
              help="View weights, e.g. 'mix=1,hog=0.5'. Default: all views at 1.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--target", default=None, help="Plant a specific target id.")
@click.option("--max-iterations", type=int, default=1000, show_default=True)
@click.option("--out", "out_path", default=None, help="Write the JSONL log here.")
def simulate(corpus_dir, algorithm, weights, seed, target, max_iterations, out_path):
    """Run one simulated session and print its summary."""
    corpus = _load_corpus_or_fail(corpus_dir)
    weight_map = _parse_weights(weights) if weights else {
        name: 1.0 for name in corpus.views}
    sim_cfg = simulator.SimulatorConfig(weights=weight_map,
                                        max_iterations=max_iterations)
    engine_cfg = EngineConfig(view_weights=weight_map)
    log = simulator.run_simulation(corpus, algorithm, sim_cfg, engine_cfg,
                                   seed=seed, target_id=target)
    if out_path:
        log.save(out_path)
    summary = {
        "algorithm": algorithm,
        "target_id": log.target_id,
        "converged": log.converged,
        "iterations": log.n_iterations,
        "average_relevance": metrics_mod.average_relevance(log),
    }
    if any(r.target_rank is not None for r in log.records):
        summary["percentile_rank"] = metrics_mod.percentile_rank(log)
    click.echo(json.dumps(summary, sort_keys=True))
    click.echo(f"wall time: {log.wall_time_s:.2f}s", err=True)


@main.command()
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--algorithms", default="faircop,rocchio,random", show_default=True)
@click.option("--views-combos", "combos_spec", default=None,
              help="Combos like 'mix;hog+mix;hog+facenet+mix'. Default: all views.")
@click.option("--runs", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-iterations", type=int, default=1000, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", required=True)
def experiment(corpus_dir, algorithms, combos_spec, runs, seed, max_iterations,
               jobs, out_dir):
    """Seeded simulation sweep over algorithms and view combos."""
    corpus = _load_corpus_or_fail(corpus_dir)
    algo_list = [a.strip() for a in algorithms.split(",") if a.strip()]
    for algo in algo_list:
        if algo not in ALGORITHMS:
            raise _fail(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
    combos = (_parse_combos(combos_spec) if combos_spec
              else [{name: 1.0 for name in corpus.views}])
    sim_cfg = simulator.SimulatorConfig(weights=combos[0],
                                        max_iterations=max_iterations)
    report = simulator.run_experiment(corpus, algo_list, combos, runs, seed,
                                      sim_cfg=sim_cfg, jobs=jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.md").write_text(report.to_markdown())
    click.echo(report.to_markdown())


@main.group()
def metrics() -> None:
    """Representation and distribution metrics."""


@metrics.command()
@click.option("--embeddings", "emb_path", required=True,
              help=".npy or CSV matrix, one row per sample.")
@click.option("--factors", "fac_path", required=True,
              help=".npy or CSV matrix of factor values, one column per factor.")
@click.option("--regressor", type=click.Choice(["boosted_stumps", "ridge"]),
              default="boosted_stumps", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", default=None)
def dci(emb_path, fac_path, regressor, seed, out_path):
    """Disentanglement, completeness, informativeness of representations."""
    try:
        z = _load_array(emb_path)
        v = _load_array(fac_path)
        importance = metrics_mod.fit_importance(z, v, regressor=regressor, seed=seed)
        d_score, c_score = metrics_mod.dci(importance)
        i_score = metrics_mod.informativeness(z, v, regressor=regressor, seed=seed)
    except (OSError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    payload = json.dumps({
        "disentanglement": d_score, "completeness": c_score,
        "informativeness": i_score, "regressor": regressor,
        "importance_shape": list(importance.matrix.shape),
    }, sort_keys=True, indent=2) + "\n"
    _emit(payload, out_path)


@metrics.command()
@click.option("--embeddings", "emb_path", required=True)
@click.option("--attributes", "attr_path", required=True,
              help="CSV with a header row of attribute names, one row per sample.")
@click.option("--neighbors", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default=None,
              help="Directory for heatmap CSV grids plus summary.json.")
def fairness(emb_path, attr_path, neighbors, seed, out_dir):
    """Group-conditional prediction parity of representations."""
    try:
        z = _load_array(emb_path)
        rows = Path(attr_path).read_text().splitlines()
        header = [h.strip() for h in rows[0].split(",")]
        values = [line.split(",") for line in rows[1:] if line.strip()]
        attributes = {name: np.array([row[i].strip() for row in values])
                      for i, name in enumerate(header)}
        report = metrics_mod.fairness(z, attributes, neighbor_count=neighbors,
                                      split_seed=seed)
    except (OSError, ValueError, IndexError) as exc:
        raise _fail(str(exc)) from exc
    summary = json.dumps({
        "f_score": report.f_score, "dp_gap": report.dp_gap,
        "neighbors": report.neighbor_count,
        "pairs": [list(key) for key in sorted(report.heatmaps)],
    }, sort_keys=True, indent=2) + "\n"
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(summary)
        for (target, sensitive), grid in sorted(report.heatmaps.items()):
            t_classes, s_classes = report.heatmap_labels[(target, sensitive)]
            lines = ["," + ",".join(str(s) for s in s_classes)]
            for i, t_class in enumerate(t_classes):
                lines.append(str(t_class) + "," +
                             ",".join(repr(float(x)) for x in grid[i]))
            (out / f"heatmap_{target}_given_{sensitive}.csv").write_text(
                "\n".join(lines) + "\n")
    click.echo(summary, nl=False)


@metrics.command()
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--selected", "selected_path", required=True,
              help="File with one record id per line (or a JSON array).")
@click.option("--out", "out_path", default=None)
def dist(corpus_dir, selected_path, out_path):
    """Attribute distribution similarity between corpus and a selection."""
    corpus = _load_corpus_or_fail(corpus_dir)
    text = Path(selected_path).read_text()
    try:
        selected = json.loads(text)
        if not isinstance(selected, list):
            raise ValueError
    except ValueError:
        selected = [line.strip() for line in text.splitlines() if line.strip()]
    try:
        result = metrics_mod.distribution_similarity(corpus, selected)
    except (KeyError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    _emit(json.dumps(result, sort_keys=True, indent=2) + "\n", out_path)


@main.command()
@click.option("--corpus", "corpus_dir", required=True)
@click.option("--view", "view_name", default=None,
              help="Which embedding view to pretrain against.")
@click.option("--hidden-dims", default="128", show_default=True)
@click.option("--output-dim", type=int, default=64, show_default=True)
@click.option("--steps", type=int, default=500, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--noise-sigma", type=float, default=0.1, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, help="Checkpoint file path.")
def pretrain(corpus_dir, view_name, hidden_dims, output_dim, steps, batch_size,
             noise_sigma, learning_rate, tau, seed, out_path):
    """Contrastive warm-up of a projection network on one embedding view."""
    corpus = _load_corpus_or_fail(corpus_dir)
    from .corpus import default_view_name
    view = corpus.views.get(view_name or default_view_name(corpus))
    if view is None:
        raise _fail(f"unknown view {view_name!r}")
    dims = [int(d) for d in hidden_dims.split(",") if d.strip()]
    net = network.init_net(view.dim, dims, output_dim, seed=seed)
    cfg = network.TrainConfig(learning_rate=learning_rate, tau=tau, seed=seed)
    try:
        network.pretrain(net, view, cfg, noise_sigma=noise_sigma,
                         batch_size=batch_size, steps=steps)
    except ValueError as exc:
        raise _fail(str(exc)) from exc
    network.save_checkpoint(net, out_path)
    click.echo(out_path)


@main.command()
@click.option("--config", "config_path", default=None, help="Service config JSON.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--corpus", "corpus_dir", default=None)
@click.option("--image-root", default=None)
@click.option("--storage", "storage_dir", default=None)
def serve(config_path, host, port, corpus_dir, image_root, storage_dir):
    """Run the HTTP session service (FAIRCOP_* env vars override flags)."""
    cfg = (service.ServiceConfig.from_file(config_path) if config_path
           else service.ServiceConfig())
    if host:
        cfg.host = host
    if port:
        cfg.port = port
    if corpus_dir:
        cfg.corpus_path = corpus_dir
    if image_root:
        cfg.image_root = image_root
    if storage_dir:
        cfg.storage_dir = storage_dir
    cfg.apply_env()
    if not cfg.corpus_path:
        raise _fail("a corpus is required (--corpus or FAIRCOP_CORPUS)")
    service.serve(cfg)


def _load_corpus_or_fail(corpus_dir) -> Corpus:
    try:
        return load_corpus(corpus_dir)
    except (OSError, CorpusError) as exc:
        raise _fail(str(exc)) from exc


def _emit(payload: str, out_path) -> None:
    if out_path:
        Path(out_path).write_text(payload)
        click.echo(out_path, err=True)
    else:
        sys.stdout.write(payload)


if __name__ == "__main__":
    main()
