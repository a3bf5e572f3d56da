"""Stage implementations behind the CLI.

Each stage reads prior artifacts from the output directory, verifies their
config hash, and writes its own outputs atomically. Stages:

    ingest   -> dataset/ (canonical copy), validation_report.json
    gen-kcs  -> kcs_generated.json, exemplar_profiles.json, qmatrix_generated.csv
    map      -> code_kc_map.csv
    label    -> <method>_<kcset>/labels.csv, run_report.json
    curves   -> <method>_<kcset>/curves.csv, fits.csv
    afm      -> <method>_<kcset>/afm_params.json, afm_eval.json
    report   -> report.md, report.csv
    plot     -> plots/*.svg + *.csv
"""

from __future__ import annotations

import json
from collections import defaultdict
from importlib import resources
from pathlib import Path

from . import afm as afm_mod
from . import analytics, core, evaluation, ingestion, kcgen, labeling
from .config import (
    ArtifactError,
    RunConfig,
    read_csv_artifact,
    read_json_artifact,
    write_csv_artifact,
    write_json_artifact,
)
from .embeddings import EmbeddingStore
from .gateway import HttpProvider, LLMGateway, MockProvider
from .types import (
    CodeKCMap,
    KCLabel,
    KCOrigin,
    KCSet,
    KCSetKind,
    KnowledgeComponent,
    LabelMethod,
    QMatrix,
)

LABELS_COLUMNS = ["student_id", "problem_id", "kc_id", "used", "correct",
                  "method", "rationale"]
CURVES_COLUMNS = ["kc_id", "opportunity", "error_rate", "support", "fitted_error"]
FITS_COLUMNS = ["kc_id", "a", "b", "rmse", "r2", "n_points"]

_METHOD_NAMES = {
    "baseline": LabelMethod.BASELINE,
    "llm-cot": LabelMethod.LLM_COT,
    "llm-direct": LabelMethod.LLM_DIRECT,
}


def build_gateway(config: RunConfig) -> LLMGateway | None:
    if config.method == "baseline":
        return None
    if config.mock_fixture is not None:
        provider = MockProvider(config.mock_fixture)
    elif config.endpoint:
        provider = HttpProvider(config.endpoint)
    else:
        raise ArtifactError(
            "LLM methods need either gateway.endpoint or gateway.mock_fixture"
        )
    return LLMGateway(provider, config.cache_dir, retries=config.retries,
                      concurrency=config.concurrency)


def build_store(config: RunConfig) -> EmbeddingStore:
    if config.embedding_mode == "remote":
        return EmbeddingStore(path=config.embedding_path, base_url=config.embedding_url)
    if config.embedding_path is None:
        raise ArtifactError("file embedding mode needs embeddings.path")
    return EmbeddingStore(path=config.embedding_path)


def _load_bundle(config: RunConfig) -> ingestion.DatasetBundle:
    canonical = config.output_dir / "dataset"
    root = canonical if (canonical / "submissions.csv").is_file() else config.dataset_root
    return ingestion.load_dataset(root)


def stage_ingest(config: RunConfig) -> dict:
    bundle = ingestion.load_dataset(config.dataset_root)
    report = ingestion.validate_dataset(bundle)
    ingestion.save_dataset(bundle, config.output_dir / "dataset")
    write_json_artifact(config.output_dir / "validation_report.json",
                        report.to_dict(), config.config_hash())
    return report.to_dict()


def _fewshots(config: RunConfig):
    if config.fewshots_path is not None:
        return labeling.load_fewshots(config.fewshots_path)
    with resources.as_file(
        resources.files("kclab.fixtures").joinpath("fewshots.json")
    ) as path:
        return labeling.load_fewshots(path)


def stage_gen_kcs(config: RunConfig) -> dict:
    bundle = _load_bundle(config)
    gateway = _require_llm_gateway(config)
    store = build_store(config)
    config_hash = config.config_hash()

    by_problem = defaultdict(list)
    for sub in bundle.submissions:
        by_problem[sub.problem_id].append(sub)

    candidates: list[tuple[str, str]] = []
    exemplar_sets = {}
    for problem in bundle.problems:
        correct = [s for s in by_problem[problem.problem_id]
                   if core.is_problem_correct(s, config.threshold)]
        if not correct:
            continue
        exemplar_set = kcgen.select_exemplars(
            problem, correct, config.exemplars_k, config.seed, store,
            config.threshold,
        )
        exemplar_sets[problem.problem_id] = exemplar_set
        code_by_id = {s.submission_id: s for s in correct}
        for submission_id, _emb in exemplar_set.exemplars:
            candidates.extend(kcgen.generate_candidate_kcs(
                problem, code_by_id[submission_id].code, gateway, config.model,
                config.prompts_dir,
            ))

    kc_set = kcgen.consolidate_kcs(
        candidates, config.target_n, config.seed, gateway, config.model,
        prompts_dir=config.prompts_dir,
    )
    kcs_payload = [
        {"kc_id": c.kc_id, "name": c.name, "description": c.description,
         "origin": c.origin.value}
        for c in kc_set.components
    ]
    write_json_artifact(config.output_dir / "kcs_generated.json",
                        {"kcs": kcs_payload}, config_hash)

    profiles = []
    problems_by_id = {p.problem_id: p for p in bundle.problems}
    for problem_id, exemplar_set in sorted(exemplar_sets.items()):
        code_by_id = {s.submission_id: s for s in by_problem[problem_id]}
        for submission_id, _emb in exemplar_set.exemplars:
            profile = kcgen.profile_exemplar(
                code_by_id[submission_id], problems_by_id[problem_id], kc_set,
                gateway, config.model, store, config.prompts_dir,
            )
            profiles.append({
                "problem_id": profile.problem_id,
                "submission_id": profile.submission_id,
                "kc_subset": sorted(profile.kc_subset),
            })
    write_json_artifact(config.output_dir / "exemplar_profiles.json",
                        {"profiles": profiles}, config_hash)

    qmatrix_rows = []
    union_by_problem: dict[str, set[str]] = defaultdict(set)
    for profile in profiles:
        union_by_problem[profile["problem_id"]].update(profile["kc_subset"])
    for problem_id, kcs in sorted(union_by_problem.items()):
        for kc_id in sorted(kcs):
            qmatrix_rows.append({"problem_id": problem_id, "kc_id": kc_id})
    write_csv_artifact(config.output_dir / "qmatrix_generated.csv",
                       ["problem_id", "kc_id"], qmatrix_rows, config_hash)
    return {"n_candidates": len(candidates), "n_kcs": len(kc_set.components),
            "n_profiles": len(profiles)}


def _require_llm_gateway(config: RunConfig) -> LLMGateway:
    if config.mock_fixture is not None:
        provider = MockProvider(config.mock_fixture)
    elif config.endpoint:
        provider = HttpProvider(config.endpoint)
    else:
        raise ArtifactError(
            "this stage needs either gateway.endpoint or gateway.mock_fixture"
        )
    return LLMGateway(provider, config.cache_dir, retries=config.retries,
                      concurrency=config.concurrency)


def stage_map(config: RunConfig) -> dict:
    bundle = _load_bundle(config)
    store = build_store(config)
    config_hash = config.config_hash()

    payload = read_json_artifact(config.output_dir / "exemplar_profiles.json",
                                 config_hash)
    profiles_by_problem: dict[str, list[kcgen.ExemplarKCProfile]] = defaultdict(list)
    code_by_submission = {s.submission_id: s for s in bundle.submissions}
    for row in payload["profiles"]:
        sub = code_by_submission[row["submission_id"]]
        profiles_by_problem[row["problem_id"]].append(kcgen.ExemplarKCProfile(
            problem_id=row["problem_id"],
            submission_id=row["submission_id"],
            kc_subset=frozenset(row["kc_subset"]),
            embedding=store.get_embedding(sub.submission_id, sub.code),
        ))

    pairs = core.build_attempt_pairs(list(bundle.submissions))
    rows = []
    for pair in pairs:
        profiles = profiles_by_problem.get(pair.problem_id)
        if not profiles:
            continue
        (student_id, problem_id), subset = kcgen.map_student_to_kcs(pair, profiles, store)
        for kc_id in sorted(subset):
            rows.append({"student_id": student_id, "problem_id": problem_id,
                         "kc_id": kc_id})
    write_csv_artifact(config.output_dir / "code_kc_map.csv",
                       ["student_id", "problem_id", "kc_id"], rows, config_hash)
    return {"n_entries": len({(r["student_id"], r["problem_id"]) for r in rows})}


def _load_generated_kc_set(config: RunConfig) -> KCSet:
    payload = read_json_artifact(config.output_dir / "kcs_generated.json",
                                 config.config_hash())
    components = tuple(
        KnowledgeComponent(kc_id=o["kc_id"], name=o["name"],
                           description=o.get("description", ""),
                           origin=KCOrigin(o.get("origin", "generated")))
        for o in payload["kcs"]
    )
    return KCSet(set_id="generated", kind=KCSetKind.GENERATED, components=components)


def resolve_kc_source(config: RunConfig, bundle) -> tuple[KCSet, QMatrix | CodeKCMap]:
    """KC set and per-pair assignment map for the configured kc_set kind."""
    if config.kc_set == "human":
        if not bundle.kc_sets or not bundle.q_matrices:
            raise ArtifactError(
                "kc_set=human needs kcs.json and qmatrix.csv in the dataset"
            )
        return bundle.kc_sets[0], bundle.q_matrices[0]
    kc_set = _load_generated_kc_set(config)
    if config.kc_set == "generated":
        rows = read_csv_artifact(config.output_dir / "qmatrix_generated.csv",
                                 config.config_hash())
        entries: dict[str, set[str]] = defaultdict(set)
        for row in rows:
            entries[row["problem_id"]].add(row["kc_id"])
        return kc_set, QMatrix({p: frozenset(k) for p, k in entries.items()})
    rows = read_csv_artifact(config.output_dir / "code_kc_map.csv",
                             config.config_hash())
    entries2: dict[tuple[str, str], set[str]] = defaultdict(set)
    for row in rows:
        entries2[(row["student_id"], row["problem_id"])].add(row["kc_id"])
    return kc_set, CodeKCMap({k: frozenset(v) for k, v in entries2.items()})


def stage_label(config: RunConfig) -> dict:
    bundle = _load_bundle(config)
    kc_set, kc_map = resolve_kc_source(config, bundle)
    pairs = core.build_attempt_pairs(list(bundle.submissions))
    if isinstance(kc_map, CodeKCMap):
        pairs = [p for p in pairs if (p.student_id, p.problem_id) in kc_map.entries]

    def kcs_for_pair(pair):
        if isinstance(kc_map, CodeKCMap):
            ids = kc_map.kcs_for(pair.student_id, pair.problem_id)
        else:
            ids = kc_map.kcs_for(pair.problem_id)
        return [kc_set.get(kc_id) for kc_id in sorted(ids)]

    mode = {"baseline": "baseline", "llm-cot": "cot", "llm-direct": "direct"}[config.method]
    gateway = build_gateway(config)
    problems = {p.problem_id: p for p in bundle.problems}
    labels, report = labeling.label_dataset(
        pairs, problems, kcs_for_pair, _fewshots(config), mode, gateway,
        config.model, config.threshold, config.prompts_dir,
    )

    config_hash = config.config_hash()
    run_dir = config.run_dir()
    rows = [
        {"student_id": l.student_id, "problem_id": l.problem_id, "kc_id": l.kc_id,
         "used": str(l.used).lower(), "correct": str(l.correct).lower(),
         "method": l.method.value, "rationale": l.rationale}
        for l in labels
    ]
    write_csv_artifact(run_dir / "labels.csv", LABELS_COLUMNS, rows, config_hash)
    write_json_artifact(run_dir / "run_report.json", report.to_dict(), config_hash)
    return report.to_dict()


def load_labels(config: RunConfig) -> list[KCLabel]:
    rows = read_csv_artifact(config.run_dir() / "labels.csv", config.config_hash())
    return [
        KCLabel(
            student_id=row["student_id"], problem_id=row["problem_id"],
            kc_id=row["kc_id"], used=row["used"] == "true",
            correct=row["correct"] == "true",
            method=LabelMethod(row["method"]), rationale=row["rationale"],
        )
        for row in rows
    ]


def _opportunities(config: RunConfig, bundle):
    _kc_set, kc_map = resolve_kc_source(config, bundle)
    pairs = core.build_attempt_pairs(list(bundle.submissions))
    if isinstance(kc_map, CodeKCMap):
        pairs = [p for p in pairs if (p.student_id, p.problem_id) in kc_map.entries]
    return core.opportunity_counts(pairs, kc_map)


def stage_curves(config: RunConfig) -> dict:
    bundle = _load_bundle(config)
    labels = load_labels(config)
    opportunities = _opportunities(config, bundle)
    config_hash = config.config_hash()

    kc_ids = sorted({l.kc_id for l in labels})
    curve_rows, fit_rows = [], []
    for kc_id in kc_ids:
        curve = analytics.empirical_curve(labels, kc_id, opportunities,
                                          config.min_support)
        if len(curve.points) < 2:
            continue
        fit = analytics.fit_power_law(curve)
        for point in curve.points:
            curve_rows.append({
                "kc_id": kc_id,
                "opportunity": point.opportunity,
                "error_rate": f"{point.error_rate:.6f}",
                "support": point.support,
                "fitted_error": f"{float(fit.predict(point.opportunity)):.6f}",
            })
        fit_rows.append({
            "kc_id": kc_id, "a": f"{fit.a:.6f}", "b": f"{fit.b:.6f}",
            "rmse": f"{fit.rmse:.6f}", "r2": f"{fit.r2:.6f}",
            "n_points": len(curve.points),
        })

    run_dir = config.run_dir()
    write_csv_artifact(run_dir / "curves.csv", CURVES_COLUMNS, curve_rows, config_hash)
    write_csv_artifact(run_dir / "fits.csv", FITS_COLUMNS, fit_rows, config_hash)
    return {"n_kcs_fitted": len(fit_rows)}


def stage_afm(config: RunConfig) -> dict:
    bundle = _load_bundle(config)
    labels = load_labels(config)
    opportunities = _opportunities(config, bundle)
    config_hash = config.config_hash()

    train, test = afm_mod.split_by_student(labels, config.split_fraction, config.seed)
    params = afm_mod.fit_afm(train, opportunities, config.lambda_)
    auc_value, n_test = afm_mod.evaluate_afm(params, test, opportunities)

    run_dir = config.run_dir()
    write_json_artifact(run_dir / "afm_params.json", params.to_dict(), config_hash)
    payload = {"auc": auc_value, "n_test_observations": n_test,
               "split_seed": config.seed}
    write_json_artifact(run_dir / "afm_eval.json", payload, config_hash)
    return payload


def stage_report(config: RunConfig) -> dict:
    config_hash = config.config_hash()
    fits_by_method: dict[str, list[dict]] = {}
    evals_by_method: dict[str, dict] = {}
    for run_dir in sorted(config.output_dir.glob("*_*")):
        fits_path = run_dir / "fits.csv"
        if not fits_path.is_file():
            continue
        name = run_dir.name
        fits_by_method[name] = read_csv_artifact(fits_path, config_hash)
        eval_path = run_dir / "afm_eval.json"
        if eval_path.is_file():
            evals_by_method[name] = read_json_artifact(eval_path, config_hash)
    if not fits_by_method:
        raise ArtifactError("no fits.csv artifacts found; run the curves stage first")

    if len(fits_by_method) >= 2:
        rows = evaluation.compare_methods(fits_by_method, evals_by_method)
    else:
        ((name, fits),) = fits_by_method.items()
        rmse = sum(float(f["rmse"]) for f in fits) / len(fits)
        r2 = sum(float(f["r2"]) for f in fits) / len(fits)
        rows = [{"method": name, "mean_rmse": round(rmse, 6),
                 "mean_r2": round(r2, 6),
                 "auc": evals_by_method.get(name, {}).get("auc")}]

    write_csv_artifact(config.output_dir / "report.csv",
                       ["method", "mean_rmse", "mean_r2", "auc"],
                       [{**r, "auc": "" if r["auc"] is None else r["auc"]} for r in rows],
                       config_hash)
    markdown = evaluation.comparison_markdown(rows)
    (config.output_dir / "report.md").write_text(
        f"<!-- config_hash={config_hash} -->\n{markdown}", encoding="utf-8")
    return {"methods": sorted(fits_by_method)}


def _afm_error_curve(config: RunConfig, labels, opportunities) -> dict[int, float]:
    """Mean AFM-predicted error by opportunity over training students."""
    payload = read_json_artifact(config.run_dir() / "afm_params.json",
                                 config.config_hash())
    params = afm_mod.AFMParams.from_dict(
        {k: payload[k] for k in ("theta", "beta", "gamma", "lambda")})
    by_n: dict[int, list[float]] = defaultdict(list)
    for label in labels:
        if label.student_id not in params.theta or label.kc_id not in params.beta:
            continue
        t = opportunities.get(label.student_id, label.problem_id, label.kc_id)
        p = afm_mod.afm_predict(params, label.student_id, [label.kc_id], [t])
        by_n[t + 1].append(1.0 - p)
    return {n: sum(v) / len(v) for n, v in sorted(by_n.items())}


def stage_plot(config: RunConfig, kind: str = "aggregated",
               max_opportunity: int | None = None) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bundle = _load_bundle(config)
    labels = load_labels(config)
    opportunities = _opportunities(config, bundle)
    config_hash = config.config_hash()
    run_dir = config.run_dir()
    curve_rows = read_csv_artifact(run_dir / "curves.csv", config_hash)
    fit_rows = read_csv_artifact(run_dir / "fits.csv", config_hash)
    if not curve_rows:
        raise ArtifactError("curves.csv is empty; nothing to plot")

    plots_dir = run_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    afm_curve = {}
    if (run_dir / "afm_params.json").is_file():
        afm_curve = _afm_error_curve(config, labels, opportunities)

    def emit(name: str, rows: list[dict]) -> None:
        if max_opportunity is not None:
            rows = [r for r in rows if int(r["opportunity"]) <= max_opportunity]
        write_csv_artifact(plots_dir / f"{name}.csv",
                           ["opportunity", "empirical", "powerlaw", "afm"],
                           rows, config_hash)
        fig, ax = plt.subplots(figsize=(6, 4))
        ns = [int(r["opportunity"]) for r in rows]
        ax.plot(ns, [float(r["empirical"]) for r in rows], "o-", label="empirical")
        ax.plot(ns, [float(r["powerlaw"]) if r["powerlaw"] != "" else float("nan")
                     for r in rows], "s--", label="power law")
        if any(r["afm"] != "" for r in rows):
            ax.plot(ns, [float(r["afm"]) if r["afm"] != "" else float("nan")
                         for r in rows], "^:", label="AFM")
        ax.set_xlabel("opportunity")
        ax.set_ylabel("error rate")
        ax.set_title(name)
        ax.legend()
        fig.savefig(plots_dir / f"{name}.svg", format="svg")
        plt.close(fig)

    emitted = []
    if kind == "per_kc":
        by_kc: dict[str, list[dict]] = defaultdict(list)
        for row in curve_rows:
            by_kc[row["kc_id"]].append(row)
        for kc_id, rows in sorted(by_kc.items()):
            data = [{"opportunity": r["opportunity"], "empirical": r["error_rate"],
                     "powerlaw": r["fitted_error"],
                     "afm": f"{afm_curve[int(r['opportunity'])]:.6f}"
                     if int(r["opportunity"]) in afm_curve else ""}
                    for r in rows]
            emit(f"curve_{kc_id}", data)
            emitted.append(kc_id)
    else:
        curves, fits = [], []
        by_kc2: dict[str, list[dict]] = defaultdict(list)
        for row in curve_rows:
            by_kc2[row["kc_id"]].append(row)
        fit_by_kc = {row["kc_id"]: row for row in fit_rows}
        for kc_id, rows in sorted(by_kc2.items()):
            points = tuple(
                analytics.CurvePoint(opportunity=int(r["opportunity"]),
                                     error_rate=float(r["error_rate"]),
                                     support=int(r["support"]))
                for r in rows
            )
            curves.append(analytics.LearningCurve(kc_id=kc_id, points=points))
            f = fit_by_kc[kc_id]
            fits.append(analytics.PowerLawFit(a=float(f["a"]), b=float(f["b"]),
                                              rmse=float(f["rmse"]), r2=float(f["r2"])))
        aggregated = analytics.aggregate_curves(curves, fits)
        data = [{"opportunity": n, "empirical": f"{emp:.6f}",
                 "powerlaw": "" if fitted is None else f"{fitted:.6f}",
                 "afm": f"{afm_curve[n]:.6f}" if n in afm_curve else ""}
                for n, emp, fitted in aggregated]
        emit("aggregated", data)
        emitted.append("aggregated")
    return {"emitted": emitted}


STAGES = {
    "ingest": stage_ingest,
    "gen-kcs": stage_gen_kcs,
    "map": stage_map,
    "label": stage_label,
    "curves": stage_curves,
    "afm": stage_afm,
    "report": stage_report,
}
