"""Experiment harnesses: synthetic-scenario replication, the noisy
network classification pipeline, single-dataset fits, and multi-chain
diagnostics.  Each writes a per-record CSV, an aggregate JSON, and
(optionally) rendered figures next to them."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from .config import RunConfig
from .diagnostics import gelman_rubin, trace_export
from .estimator import build_row_contexts, z_estimate
from .graphio import LabeledGraph
from .model import contaminate, generate_latent_curve, sample_matrix_completion, sample_rdpg
from .sampler import (
    credible_ellipse,
    ellipse_contains,
    entrywise_interval,
    posterior_mean,
    run_row_chains,
    sample_rows,
)
from .spectral import align, spectral_embed, sse
from .streams import derive_rng
from .weights import (
    completion_weight,
    constant_weight,
    inverse_variance_weight,
    noisy_rdpg_weight,
    rdpg_weight,
)

ALPHA = 0.05
V_SWEEP_DEFAULT = (0.005, 0.010, 0.015, 0.020)


def weight_from_config(config: RunConfig):
    if config.weight == "constant":
        return constant_weight()
    if config.weight == "rdpg":
        return rdpg_weight()
    if config.weight == "completion":
        return completion_weight(config.p)
    if config.weight == "noisy_rdpg":
        return noisy_rdpg_weight(config.v)
    # variance profile implied by the sampling scenario
    if config.scenario == "completion":
        p, s2 = config.p, config.sigma**2
        return inverse_variance_weight(lambda s: ((1 - p) * s**2 + s2) / p)
    return inverse_variance_weight(lambda s: s * (1 - s))


def criteria_list(config: RunConfig) -> list[str]:
    return ["M", "GMM", "ETEL"] if config.criterion == "all" else [config.criterion]


def _chain_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_scenario_data(config: RunConfig, replicate: int):
    rng = derive_rng(config.seed, replicate, 0)
    truth = generate_latent_curve(config.n)
    if config.scenario == "rdpg_curve":
        A = sample_rdpg(truth, rng)
    elif config.scenario == "completion":
        A = sample_matrix_completion(truth, sigma=config.sigma, p=config.p, rng=rng)
    else:
        raise ValueError(f"scenario '{config.scenario}' has no synthetic generator")
    return truth, A


def _scenario_replicate(config: RunConfig, replicate: int):
    """One replicate: data, estimates, posterior summaries, coverage."""
    crits = criteria_list(config)
    truth, A = generate_scenario_data(config, replicate)
    target = math.sqrt(truth.rho) * truth.X0

    embedding = spectral_embed(A, config.d)
    weight = weight_from_config(config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        contexts = build_row_contexts(A.A, embedding, weight, config.theta_radius)

    aligned_truth = target @ align(target, embedding.Xtilde).W

    # rows whose moments are not evaluable anywhere (the weight domain can
    # exclude a row outright in small samples) get no estimate at all
    zmat = np.full_like(embedding.Xtilde, np.nan)
    for ctx in contexts:
        try:
            zmat[ctx.i] = z_estimate(ctx).x
        except Exception:
            pass
    z_complete = not np.isnan(zmat).any()

    record = {
        "replicate": replicate,
        "sse_spectral": sse(embedding.Xtilde, target),
        "sse_z": sse(zmat, target) if z_complete else np.nan,
        "rows_failed_z": int(np.isnan(zmat[:, 0]).sum()),
    }
    per_vertex = {}
    for ci, kind in enumerate(crits):
        cfg = config.chain_config(_chain_seed(config.seed, replicate, 1 + ci))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            posts = sample_rows(contexts, kind, cfg, config.theta_radius)
        # rows whose chain could not start (weight domain breaks at the
        # embedding row in small samples) are excluded, not fudged
        sampled = [i for i, p in enumerate(posts) if p is not None]
        if not sampled:
            raise RuntimeError(f"criterion {kind}: no row sampled")
        covered = np.full((config.n, config.d), np.nan)
        ellipse_hits = np.full(config.n, np.nan)
        for i in sampled:
            post = posts[i]
            box = entrywise_interval(post, ALPHA)
            covered[i] = (box[:, 0] <= aligned_truth[i]) & (aligned_truth[i] <= box[:, 1])
            if not np.isnan(zmat[i]).any():
                cs = credible_ellipse(post, zmat[i], ALPHA)
                ellipse_hits[i] = ellipse_contains(cs, aligned_truth[i])
        if len(sampled) == config.n:
            means = np.stack([posterior_mean(p) for p in posts])
            record[f"sse_{kind}"] = sse(means, target)
        else:
            record[f"sse_{kind}"] = np.nan
        record[f"cover_{kind}"] = float(np.nanmean(covered))
        record[f"ellipse_{kind}"] = float(np.nanmean(ellipse_hits))
        record[f"accept_{kind}"] = float(np.mean(
            [posts[i].acceptance_rate for i in sampled]))
        record[f"rows_failed_{kind}"] = config.n - len(sampled)
        per_vertex[kind] = covered.mean(axis=1)
    return record, per_vertex


def _write_csv(path, rows: list[dict]):
    if not rows:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def run_scenario(config: RunConfig, workers: int = 1, figures: bool = True) -> dict:
    """Replicated synthetic experiment with accuracy and coverage summaries.

    Writes <output_dir>/replicates.csv (one row per completed replicate),
    <output_dir>/summary.json (mean errors, per-vertex and overall
    coverage), and, when figures are on, accuracy/coverage PNGs.
    Failed replicates are recorded and skipped, the run continues.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    crits = criteria_list(config)

    records = []
    vertex_cover = {k: [] for k in crits}
    failures = []
    tasks = list(range(config.replicates))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {r: pool.submit(_scenario_replicate, config, r) for r in tasks}
            results = []
            for r in tasks:
                try:
                    results.append((r, futures[r].result(), None))
                except Exception as exc:
                    results.append((r, None, str(exc)))
    else:
        results = []
        for r in tasks:
            try:
                results.append((r, _scenario_replicate(config, r), None))
            except Exception as exc:
                results.append((r, None, str(exc)))

    for r, payload, err in results:
        if err is not None:
            failures.append({"replicate": r, "error": err})
            continue
        record, per_vertex = payload
        records.append(record)
        for k in crits:
            vertex_cover[k].append(per_vertex[k])

    csv_path = os.path.join(config.output_dir, "replicates.csv")
    _write_csv(csv_path, records)

    def _agg(key, reducer=np.mean):
        vals = [rec[key] for rec in records]
        if not vals:
            return None
        out = float(reducer(vals))
        return None if np.isnan(out) else out

    methods = ["spectral", "z"] + crits
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        per_vertex_mean = {
            k: (np.nanmean(vertex_cover[k], axis=0) if vertex_cover[k] else None)
            for k in crits
        }
    summary = {
        "config": asdict(config),
        "criteria": crits,
        "replicates_completed": len(records),
        "failures": failures,
        "mean_sse": {m: _agg(f"sse_{m}", np.nanmean) for m in methods},
        "overall_coverage": {k: _agg(f"cover_{k}") for k in crits},
        "overall_ellipse_coverage": {k: _agg(f"ellipse_{k}") for k in crits},
        "mean_acceptance": {k: _agg(f"accept_{k}") for k in crits},
        "rows_failed": {k: _agg(f"rows_failed_{k}", np.sum)
                        for k in (["z"] + crits)},
        "per_vertex_coverage": {
            k: ([None if np.isnan(v) else float(v) for v in per_vertex_mean[k]]
                if per_vertex_mean[k] is not None else None)
            for k in crits
        },
    }
    json_path = os.path.join(config.output_dir, "summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)

    out = {"replicates_csv": csv_path, "summary_json": json_path, "summary": summary}
    if figures and records:
        from .figures import coverage_figure, sse_boxplot_figure

        sse_cols = {}
        for m in methods:
            vals = np.array([rec[f"sse_{m}"] for rec in records], dtype=float)
            sse_cols[m] = vals[~np.isnan(vals)]
        out["sse_figure"] = sse_boxplot_figure(
            sse_cols, os.path.join(config.output_dir, "sse_boxplot.png"))
        out["coverage_figure"] = coverage_figure(
            {k: per_vertex_mean[k] for k in crits if per_vertex_mean[k] is not None},
            1 - ALPHA,
            os.path.join(config.output_dir, "coverage.png"))
    return out


def _stratified_split(labels: np.ndarray, train_frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Class-stratified split targeting floor(train_frac * n) training
    points, at least one per class, by largest-remainder allocation."""
    n = len(labels)
    target = int(math.floor(train_frac * n))
    classes, counts = np.unique(labels, return_counts=True)
    base = {}
    remainders = {}
    for c, n_c in zip(classes, counts):
        ideal = train_frac * n_c
        base[c] = min(int(n_c), max(1, int(math.floor(ideal))))
        remainders[c] = ideal - math.floor(ideal)
    total = sum(base.values())
    order = sorted(classes, key=lambda c: -remainders[c])
    k = 0
    while total < target and k < 10 * len(classes):
        c = order[k % len(classes)]
        if base[c] < counts[classes.tolist().index(c)]:
            base[c] += 1
            total += 1
        k += 1
    while total > target:
        c = max(classes, key=lambda c: base[c])
        if base[c] <= 1:
            break
        base[c] -= 1
        total -= 1

    train_idx = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        picked = rng.permutation(len(members))[:base[c]]
        train_idx.extend(members[picked])
    train_idx = np.sort(np.array(train_idx, dtype=int))
    mask = np.ones(n, dtype=bool)
    mask[train_idx] = False
    test_idx = np.flatnonzero(mask)
    if test_idx.size == 0:
        raise ValueError("split leaves no test points; lower train_frac")
    return train_idx, test_idx


def knn_classify(features: np.ndarray, labels: np.ndarray, k: int = 5,
                 train_frac: float = 0.75, repeats: int = 100,
                 rng=None) -> float:
    """Mean test misclassification of a Euclidean k-nearest-neighbor vote.

    Each repeat redraws a stratified train/test split.  Majority vote
    among the k nearest training points; a tied vote goes to the tied
    class whose nearest member is closest.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (0.0 < train_frac < 1.0):
        raise ValueError("train_frac must lie in (0, 1)")
    if len(np.unique(labels)) < 2:
        raise ValueError("need at least two classes")
    if rng is None:
        rng = np.random.default_rng(0)

    errors = []
    for _ in range(repeats):
        train_idx, test_idx = _stratified_split(labels, train_frac, rng)
        Xtr, ytr = features[train_idx], labels[train_idx]
        Xte, yte = features[test_idx], labels[test_idx]
        kk = min(k, len(train_idx))
        d2 = ((Xte[:, None, :] - Xtr[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :kk]
        wrong = 0
        for row in range(len(test_idx)):
            neigh = nearest[row]
            votes = ytr[neigh]
            cand, counts = np.unique(votes, return_counts=True)
            top = cand[counts == counts.max()]
            if len(top) == 1:
                pred = top[0]
            else:
                # tie: closest neighbor among the tied classes decides
                best = np.inf
                pred = top[0]
                for c in top:
                    dist_c = d2[row, neigh[votes == c]].min()
                    if dist_c < best:
                        best = dist_c
                        pred = c
            wrong += int(pred != yte[row])
        errors.append(wrong / len(test_idx))
    return float(np.mean(errors))


def _pipeline_estimates(A, d: int, weight, config: RunConfig, seed_key: tuple):
    """Embedding, Z-estimates, and per-criterion posterior means.

    Rows whose refinement fails (weight domain excludes them in noisy
    graphs) keep the best available earlier estimate as their feature;
    the substitution counts are returned alongside.
    """
    embedding = spectral_embed(A, d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        contexts = build_row_contexts(A.A, embedding, weight, config.theta_radius)
    substitutions = {}
    zmat = embedding.Xtilde.copy()
    z_failed = 0
    for ctx in contexts:
        try:
            zmat[ctx.i] = z_estimate(ctx).x
        except Exception:
            z_failed += 1
    substitutions["z"] = z_failed
    out = {"spectral": embedding.Xtilde, "z": zmat}
    for ci, kind in enumerate(criteria_list(config)):
        cfg = config.chain_config(_chain_seed(config.seed, *seed_key, 1 + ci))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            posts = sample_rows(contexts, kind, cfg, config.theta_radius)
        means = zmat.copy()
        failed = 0
        for i, p in enumerate(posts):
            if p is None:
                failed += 1
            else:
                means[i] = posterior_mean(p)
        out[kind] = means
        substitutions[kind] = failed
    return out, substitutions


def run_network_pipeline(config: RunConfig, graph: LabeledGraph,
                         v_values=None, knn_repeats: int = 100,
                         workers: int = 1, figures: bool = True) -> dict:
    """Contaminate, embed, estimate, and classify a labeled graph.

    For each contamination level v the graph is perturbed
    config.replicates times; every estimator's rows feed a 5-NN
    classifier and the mean test misclassification is recorded.
    Uses the variance-matched weight 1/(s(1-t) + v^2) and rank d equal
    to the number of distinct labels.
    """
    if graph.labels is None:
        raise ValueError("network pipeline needs vertex labels")
    os.makedirs(config.output_dir, exist_ok=True)
    v_values = list(V_SWEEP_DEFAULT) if v_values is None else list(v_values)
    d = int(len(np.unique(graph.labels)))
    methods = ["spectral", "z"] + criteria_list(config)

    rows = []
    failures = []
    for vi, v in enumerate(v_values):
        for rep in range(config.replicates):
            rng = derive_rng(config.seed, vi, rep, 0)
            A = contaminate(graph.adjacency, v, rng)
            weight = noisy_rdpg_weight(v)
            try:
                estimates, substituted = _pipeline_estimates(
                    A, d, weight, config, (vi, rep))
            except Exception as exc:
                failures.append({"v": v, "replicate": rep, "error": str(exc)})
                continue
            for mi, m in enumerate(methods):
                err = knn_classify(
                    estimates[m], graph.labels, k=5, train_frac=0.75,
                    repeats=knn_repeats,
                    rng=derive_rng(config.seed, vi, rep, 1 + mi),
                )
                rows.append({"v": v, "replicate": rep, "method": m,
                             "misclassification": err,
                             "rows_substituted": substituted.get(m, 0)})

    csv_path = os.path.join(config.output_dir, "misclassification.csv")
    _write_csv(csv_path, rows)

    agg = {}
    for v in v_values:
        agg[str(v)] = {}
        for m in methods:
            vals = [r["misclassification"] for r in rows
                    if r["v"] == v and r["method"] == m]
            agg[str(v)][m] = {
                "mean": float(np.mean(vals)) if vals else None,
                "std": float(np.std(vals)) if vals else None,
                "count": len(vals),
            }
    summary = {
        "config": asdict(config),
        "d": d,
        "v_values": v_values,
        "methods": methods,
        "knn_repeats": knn_repeats,
        "failures": failures,
        "misclassification": agg,
    }
    json_path = os.path.join(config.output_dir, "classification_summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)

    out = {"misclassification_csv": csv_path, "summary_json": json_path,
           "summary": summary}
    if figures and rows:
        from .figures import misclassification_figure

        out["misclassification_figure"] = misclassification_figure(
            rows, v_values, methods,
            os.path.join(config.output_dir, "misclassification.png"))
    return out


def run_fit(config: RunConfig, graph: LabeledGraph, workers: int = 1,
            figures: bool = True) -> dict:
    """Estimate rows and posterior intervals for a user-supplied graph."""
    os.makedirs(config.output_dir, exist_ok=True)
    crits = criteria_list(config)
    A = graph.adjacency
    weight = weight_from_config(config)
    embedding = spectral_embed(A, config.d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        contexts = build_row_contexts(A.A, embedding, weight, config.theta_radius)
    zmat = np.stack([z_estimate(ctx).x for ctx in contexts])

    results = {}
    accept = {}
    for ci, kind in enumerate(crits):
        cfg = config.chain_config(_chain_seed(config.seed, 0, 1 + ci))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            posts = sample_rows(contexts, kind, cfg, config.theta_radius,
                                workers=workers)
        rows_ok = [p for p in posts if p is not None]
        if not rows_ok:
            raise RuntimeError(f"criterion {kind}: all rows failed")
        results[kind] = posts
        accept[kind] = float(np.mean([p.acceptance_rate for p in rows_ok]))

    records = []
    for i in range(A.n):
        rec = {"row_index": i}
        for k in range(config.d):
            rec[f"embed_{k + 1}"] = embedding.Xtilde[i, k]
            rec[f"z_{k + 1}"] = zmat[i, k]
        for kind in crits:
            post = results[kind][i]
            if post is None:
                for k in range(config.d):
                    rec[f"mean_{kind}_{k + 1}"] = ""
                    rec[f"lo_{kind}_{k + 1}"] = ""
                    rec[f"hi_{kind}_{k + 1}"] = ""
                continue
            mean = posterior_mean(post)
            box = entrywise_interval(post, ALPHA)
            for k in range(config.d):
                rec[f"mean_{kind}_{k + 1}"] = mean[k]
                rec[f"lo_{kind}_{k + 1}"] = box[k, 0]
                rec[f"hi_{kind}_{k + 1}"] = box[k, 1]
        records.append(rec)

    csv_path = os.path.join(config.output_dir, "row_estimates.csv")
    _write_csv(csv_path, records)
    summary = {
        "config": asdict(config),
        "n": A.n,
        "criteria": crits,
        "mean_acceptance": accept,
        "failed_rows": {k: [i for i, p in enumerate(results[k]) if p is None]
                        for k in crits},
    }
    json_path = os.path.join(config.output_dir, "fit_summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)

    out = {"row_estimates_csv": csv_path, "summary_json": json_path,
           "summary": summary}
    if figures:
        from .figures import fit_figure

        out["fit_figure"] = fit_figure(
            embedding.Xtilde, zmat, results, crits,
            os.path.join(config.output_dir, "fit.png"))
    return out


def run_diagnose(config: RunConfig, graph: LabeledGraph | None = None,
                 rows=None, workers: int = 1, figures: bool = True) -> dict:
    """Multi-chain sampling on selected rows with a scale-reduction table.

    Runs config.chains (at least 2) parallel chains per selected row,
    writes the per-row scale-reduction factors, the full trace CSV, and
    a trace figure.
    """
    if config.chains < 2:
        raise ValueError("diagnostics need at least two chains")
    os.makedirs(config.output_dir, exist_ok=True)
    if graph is not None:
        A = graph.adjacency
    else:
        _, A = generate_scenario_data(config, 0)
    weight = weight_from_config(config)
    embedding = spectral_embed(A, config.d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        contexts = build_row_contexts(A.A, embedding, weight, config.theta_radius)
    if rows is None:
        rows = list(range(min(5, A.n)))
    crits = criteria_list(config)

    records = []
    all_posts = []
    for kind in crits:
        for i in rows:
            cfg = config.chain_config(_chain_seed(config.seed, 2, i))
            chains = run_row_chains(contexts[i], kind, cfg)
            report = gelman_rubin(chains)
            all_posts.extend(chains)
            for k in range(config.d):
                records.append({
                    "criterion": kind,
                    "row_index": i,
                    "coordinate": k + 1,
                    "psrf_point": report.point_estimate[k],
                    "psrf_upper": report.upper_ci[k],
                    "chains": report.chains_used,
                })

    csv_path = os.path.join(config.output_dir, "psrf.csv")
    _write_csv(csv_path, records)
    trace_path = os.path.join(config.output_dir, "trace.csv")
    trace_export(all_posts, trace_path)
    summary = {
        "config": asdict(config),
        "rows": list(rows),
        "criteria": crits,
        "max_psrf_point": max(r["psrf_point"] for r in records),
        "max_psrf_upper": max(r["psrf_upper"] for r in records),
    }
    json_path = os.path.join(config.output_dir, "diagnose_summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)

    out = {"psrf_csv": csv_path, "trace_csv": trace_path,
           "summary_json": json_path, "summary": summary}
    if figures:
        from .figures import trace_figure

        out["trace_figure"] = trace_figure(
            all_posts, os.path.join(config.output_dir, "trace.png"))
    return out
