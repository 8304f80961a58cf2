"""Experiment command line.

Subcommands: generate, fit, sweep-alpha, rate-experiment, verify-bounds,
report. Every run writes a manifest.json recording the resolved config,
its hash, the seed, the package version, and the active kernel backend,
so identical configs reproduce byte-identical output trees. Exit codes:
0 success, 1 strict-mode convergence failure, 2 bad configuration,
3 I/O failure. ALPHAVB_THREADS caps worker threads for replication loops;
results are reduced in task order regardless of scheduling.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .datasets import (
    KINDS,
    SIDECAR_NAME,
    atomic_write_text,
    corpus_from_bundle,
    default_tiny_model,
    generate,
    read_points_csv,
    read_regression_csv,
    read_sidecar,
    read_vocab,
    write_bundle,
)
from .gmm import GmmPrior, fit_gmm, match_means, UPDATE_RULES
from .kernels import active_backend
from .lda import LdaCorpus, LdaHyper, fit_lda, read_corpus_csv, top_words
from .objective import AlphaConfig
from .rng import Stream
from .risklab import (
    KLNeighborhoodSpec,
    RiskCheckRow,
    check_risk_inequality,
    gmm_mixture_risk,
    prior_mass_bound,
    rate_slope,
    write_check_rows,
)
from .sparse_linreg import (
    HDR_UPDATE_RULES,
    BlmPrior,
    RegressionData,
    blm_squared_error_risk,
    fit_blm,
    fit_hdr,
)

FIT_MODELS = ("gmm", "hdr", "blm", "lda")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _thread_count() -> int:
    raw = os.environ.get("ALPHAVB_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"ALPHAVB_THREADS must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError("ALPHAVB_THREADS must be at least 1")
    return workers


def _parallel_map(fn, tasks):
    workers = _thread_count()
    if workers == 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    results = [None] * len(tasks)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fn, task): i for i, task in enumerate(tasks)}
        for fut in futures:
            results[futures[fut]] = fut.result()
    return results


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def _config_hash(config: dict) -> str:
    canonical = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_manifest(out_dir, config: dict, outputs: list) -> None:
    # The manifest identifies the experiment, not its location: the output
    # directory and the config file's path are excluded so reruns into a
    # different directory produce byte-identical manifests.
    experiment = {
        k: v for k, v in config.items() if k not in ("out", "config_path")
    }
    manifest = {
        "command": config["command"],
        "config": _jsonable(experiment),
        "config_sha256": _config_hash(experiment),
        "seed": config.get("seed", 0),
        "version": __version__,
        "backend": active_backend(),
        "outputs": sorted(outputs),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _require(config: dict, key: str):
    if config.get(key) is None:
        raise ConfigError(f"missing required config key {key!r}")
    return config[key]


def _check_keys(config: dict, allowed: set) -> None:
    base = {"command", "out", "seed", "strict", "config_path"}
    unknown = set(config) - allowed - base
    if unknown:
        raise ConfigError(f"unknown config keys for {config['command']}: {sorted(unknown)}")


def _as_alpha(value) -> float:
    try:
        alpha = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"alpha must be a number, got {value!r}") from None
    if not (0.0 < alpha <= 1.0):
        raise ConfigError("alpha must lie in (0, 1]")
    return alpha


def _alpha_cfg(config: dict, default_tol: float = 1e-6, default_iters: int = 200) -> AlphaConfig:
    try:
        return AlphaConfig(
            alpha=_as_alpha(config.get("alpha", 1.0)),
            max_iters=int(config.get("max_iters", default_iters)),
            elbo_tol=float(config.get("elbo_tol", default_tol)),
            seed=int(config.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_sidecar_near(data_path):
    sidecar = os.path.join(os.path.dirname(os.path.abspath(data_path)), SIDECAR_NAME)
    if os.path.exists(sidecar):
        return read_sidecar(sidecar)
    return None


# --- fit helpers ------------------------------------------------------------


def _fit_one(model: str, data_path, config: dict, alpha: float, seed: int):
    cfg = AlphaConfig(
        alpha=alpha,
        max_iters=int(config.get("max_iters", 200)),
        elbo_tol=float(config.get("elbo_tol", 1e-6)),
        seed=seed,
    )
    if model == "gmm":
        y = read_points_csv(data_path)
        k = int(config.get("k", 3))
        prior = GmmPrior(
            mu0=np.zeros(y.shape[1]),
            sigma0_sq=float(config.get("sigma0_sq", 50.0)),
            pi=np.full(k, 1.0 / k),
        )
        rule = config.get("gmm_update_rule", "derived")
        if rule not in UPDATE_RULES:
            raise ConfigError(f"gmm_update_rule must be one of {UPDATE_RULES}")
        state, trace = fit_gmm(y, prior, cfg, update_rule=rule)
        payload = {
            "mu_tilde": state.mu_tilde,
            "sigma_tilde_sq": state.sigma_tilde_sq,
            "pi": prior.pi,
        }
    elif model == "hdr":
        x, y = read_regression_csv(data_path)
        data = RegressionData(x, y, sigma=float(config.get("sigma", 1.0)))
        rule = config.get("hdr_update_rule", "derived")
        if rule not in HDR_UPDATE_RULES:
            raise ConfigError(f"hdr_update_rule must be one of {HDR_UPDATE_RULES}")
        state, trace = fit_hdr(
            data,
            cfg,
            nu1=float(config.get("nu1", 100.0)),
            inclusion=config.get("inclusion"),
            update_rule=rule,
        )
        payload = {"mu": state.mu, "sigma_sq": state.sigma_sq, "phi": state.phi, "nu1": state.nu1}
    elif model == "blm":
        x, y = read_regression_csv(data_path)
        data = RegressionData(x, y, sigma=float(config.get("sigma", 1.0)))
        prior = BlmPrior.default(data.d)
        state, trace = fit_blm(data, cfg, prior)
        payload = {
            "beta_mean": state.beta_mean,
            "beta_cov": state.beta_cov,
            "inv_gamma_shape": state.inv_gamma_shape,
            "inv_gamma_rate": state.inv_gamma_rate,
        }
    elif model == "lda":
        corpus = read_corpus_csv(data_path, config.get("vocab_size"))
        hyper = LdaHyper(
            n_topics=int(config.get("k", 3)),
            eta_beta=config.get("eta_beta"),
            eta_gamma=config.get("eta_gamma"),
            c_exponent=config.get("c_exponent"),
        )
        state, trace = fit_lda(corpus, hyper, cfg)
        payload = {"lam": state.lam, "gamma": state.gamma}
    else:
        raise ConfigError(f"model must be one of {FIT_MODELS}, got {model!r}")
    return payload, trace


STATE_REQUIRED = {
    "gmm": ("mu_tilde", "sigma_tilde_sq", "pi"),
    "hdr": ("mu", "sigma_sq", "phi", "nu1"),
    "blm": ("beta_mean", "beta_cov", "inv_gamma_shape", "inv_gamma_rate"),
    "lda": ("lam", "gamma"),
}


def validate_state(doc: dict) -> None:
    """Check a fitted-state JSON document against its model's schema."""
    for key in ("model", "alpha", "seed", "state"):
        if key not in doc:
            raise ValueError(f"state document missing {key!r}")
    model = doc["model"]
    if model not in STATE_REQUIRED:
        raise ValueError(f"unknown model {model!r} in state document")
    missing = [k for k in STATE_REQUIRED[model] if k not in doc["state"]]
    if missing:
        raise ValueError(f"state document missing fields {missing}")


def _state_doc(model: str, alpha: float, seed: int, payload: dict, trace) -> dict:
    doc = {
        "model": model,
        "alpha": alpha,
        "seed": seed,
        "state": payload,
        "n_sweeps": len(trace.values),
        "converged_at": trace.converged_at,
        "final_objective": trace.values[-1] if trace.values else None,
    }
    validate_state(_jsonable(doc))
    return doc


# --- subcommands -----------------------------------------------------------


def _cmd_generate(config: dict) -> int:
    _check_keys(config, {"kind", "params"})
    kind = _require(config, "kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    out_dir = _require(config, "out")
    try:
        bundle = generate(kind, config.get("params"), int(config.get("seed", 0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    written = write_bundle(bundle, out_dir)
    _write_manifest(out_dir, config, written + ["manifest.json"])
    return 0


def _cmd_fit(config: dict) -> int:
    _check_keys(
        config,
        {
            "model", "data", "alpha", "k", "sigma0_sq", "gmm_update_rule", "nu1",
            "hdr_update_rule",
            "inclusion", "sigma", "eta_beta", "eta_gamma", "c_exponent",
            "vocab_size", "max_iters", "elbo_tol",
        },
    )
    model = _require(config, "model")
    data_path = _require(config, "data")
    out_dir = _require(config, "out")
    alpha = config.get("alpha", 1.0)
    if isinstance(alpha, (list, tuple)):
        if len(alpha) != 1:
            raise ConfigError("fit takes a single alpha; use sweep-alpha for a list")
        alpha = alpha[0]
    alpha = _as_alpha(alpha)
    seed = int(config.get("seed", 0))
    payload, trace = _fit_one(model, data_path, config, alpha, seed)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "state.json"), _state_doc(model, alpha, seed, payload, trace))
    _write_csv(
        os.path.join(out_dir, "trace.csv"),
        ["sweep", "objective"],
        [[i, _fmt(v)] for i, v in enumerate(trace.values)],
    )
    _write_manifest(out_dir, config, ["state.json", "trace.csv", "manifest.json"])
    if config.get("strict") and trace.converged_at is None:
        print("fit did not converge within max_iters", file=sys.stderr)
        return 1
    return 0


def _sweep_metrics(model: str, payload: dict, sidecar: dict | None) -> dict:
    metrics = {}
    if sidecar is None:
        return metrics
    truth = sidecar.get("truth", {})
    if model == "gmm" and "means" in truth:
        _, err = match_means(np.asarray(payload["mu_tilde"]), np.asarray(truth["means"]))
        metrics["mean_error"] = err
    elif model in ("hdr", "blm") and "beta_star" in truth:
        beta = np.asarray(truth["beta_star"], dtype=np.float64)
        support = np.asarray(truth.get("support", []), dtype=np.int64)
        if model == "hdr":
            phi = np.asarray(payload["phi"])
            mu = np.asarray(payload["mu"])
            null = np.setdiff1d(np.arange(beta.size), support)
            metrics["min_support_phi"] = float(phi[support].min()) if support.size else float("nan")
            metrics["max_null_phi"] = float(phi[null].max()) if null.size else float("nan")
            metrics["max_coef_error"] = float(np.max(np.abs(phi * mu - beta)))
        else:
            mean = np.asarray(payload["beta_mean"])
            cov = np.asarray(payload["beta_cov"])
            metrics["risk"] = float(((mean - beta) ** 2).sum() + np.trace(cov))
    elif model == "lda" and "supports" in truth:
        supports = np.asarray(truth["supports"])
        tops = top_words(np.asarray(payload["lam"]), supports.shape[1])
        k = supports.shape[0]
        overlap = np.zeros((k, k))
        for t in range(k):
            for f in range(k):
                overlap[t, f] = np.intersect1d(supports[t], tops[f]).size
        best = max(
            sum(overlap[t, perm[t]] for t in range(k))
            for perm in itertools.permutations(range(k))
        )
        metrics["mean_top_word_overlap"] = float(best) / k
    return metrics


def _cmd_sweep_alpha(config: dict) -> int:
    _check_keys(
        config,
        {
            "model", "data", "alpha", "k", "sigma0_sq", "gmm_update_rule", "nu1",
            "hdr_update_rule",
            "inclusion", "sigma", "eta_beta", "eta_gamma", "c_exponent",
            "vocab_size", "max_iters", "elbo_tol",
        },
    )
    model = _require(config, "model")
    data_path = _require(config, "data")
    out_dir = _require(config, "out")
    alphas = config.get("alpha")
    if alphas is None:
        raise ConfigError("sweep-alpha needs at least one temperature in alpha")
    if not isinstance(alphas, (list, tuple)):
        alphas = [alphas]
    if not alphas:
        raise ConfigError("sweep-alpha needs at least one temperature in alpha")
    alphas = [_as_alpha(a) for a in alphas]
    seed = int(config.get("seed", 0))
    sidecar = _load_sidecar_near(data_path)
    os.makedirs(out_dir, exist_ok=True)

    def task(alpha):
        payload, trace = _fit_one(model, data_path, config, alpha, seed)
        return payload, trace

    results = _parallel_map(task, alphas)
    outputs = []
    rows = []
    metric_keys = None
    for alpha, (payload, trace) in zip(alphas, results):
        name = f"state_alpha_{alpha:g}.json"
        _write_json(os.path.join(out_dir, name), _state_doc(model, alpha, seed, payload, trace))
        outputs.append(name)
        metrics = _sweep_metrics(model, payload, sidecar)
        if metric_keys is None:
            metric_keys = sorted(metrics)
        row = [
            _fmt(alpha),
            len(trace.values),
            trace.converged_at if trace.converged_at is not None else -1,
            _fmt(trace.values[-1]),
        ]
        row.extend(_fmt(metrics[k]) for k in metric_keys)
        rows.append(row)
    header = ["alpha", "n_sweeps", "converged_at", "final_objective"] + list(metric_keys or [])
    _write_csv(os.path.join(out_dir, "summary.csv"), header, rows)
    outputs.append("summary.csv")
    _write_manifest(out_dir, config, outputs + ["manifest.json"])
    return 0


def _cmd_rate_experiment(config: dict) -> int:
    _check_keys(config, {"model", "alpha", "n_grid", "n_seeds", "d", "k"})
    model = config.get("model", "blm")
    if model not in ("blm", "gmm"):
        raise ConfigError("rate-experiment supports models 'blm' and 'gmm'")
    out_dir = _require(config, "out")
    alpha = config.get("alpha", 0.95)
    if isinstance(alpha, (list, tuple)):
        if len(alpha) != 1:
            raise ConfigError("rate-experiment takes a single alpha")
        alpha = alpha[0]
    alpha = _as_alpha(alpha)
    n_grid = [int(v) for v in config.get("n_grid", (100, 200, 400, 800, 1600))]
    if any(v < 10 for v in n_grid) or len(n_grid) < 2:
        raise ConfigError("n_grid needs at least two sizes of 10 or more")
    n_seeds = int(config.get("n_seeds", 20))
    base_seed = int(config.get("seed", 0))
    tasks = [(i, n, s) for i, n in enumerate(n_grid) for s in range(n_seeds)]

    def run(task):
        _, n, s = task
        seed = base_seed + 1000 * s + n
        cfg = AlphaConfig(alpha=alpha, max_iters=200, elbo_tol=1e-8, seed=seed)
        if model == "blm":
            d = int(config.get("d", 4))
            bundle = generate(
                "linreg_s21",
                {"n": n, "d": d, "beta_nonzero": (5.0, -4.0, -3.0, 2.0)[:d]},
                seed,
            )
            data = RegressionData(bundle.payload["x"], bundle.payload["y"], bundle.truth["sigma"])
            state, _ = fit_blm(data, cfg)
            return blm_squared_error_risk(state, bundle.truth["beta_star"])
        k = int(config.get("k", 3))
        bundle = generate("gmm_s22", {"n": n, "k": k}, seed)
        y = bundle.payload["y"]
        prior = GmmPrior(np.zeros(y.shape[1]), 50.0, np.full(k, 1.0 / k))
        state, _ = fit_gmm(y, prior, cfg)
        perm, _ = match_means(state.mu_tilde, bundle.truth["means"])
        est = gmm_mixture_risk(
            state.mu_tilde[list(perm)],
            state.sigma_tilde_sq[list(perm)],
            bundle.truth["means"],
            bundle.truth["pi"],
            alpha if alpha < 1.0 else 0.5,
            seed=seed,
        )
        return est.value

    risks = _parallel_map(run, tasks)
    os.makedirs(out_dir, exist_ok=True)
    rows = [
        [n, s, _fmt(r)]
        for (_, n, s), r in zip(tasks, risks)
    ]
    _write_csv(os.path.join(out_dir, "rate.csv"), ["n", "seed", "risk"], rows)
    by_n = {n: [] for n in n_grid}
    for (_, n, s), r in zip(tasks, risks):
        by_n[n].append(r)
    medians = [float(np.median(by_n[n])) for n in n_grid]
    fit = rate_slope(n_grid, medians)
    _write_json(
        os.path.join(out_dir, "summary.json"),
        {
            "model": model,
            "alpha": alpha,
            "n_grid": n_grid,
            "median_risk": medians,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "max_abs_residual": fit.max_abs_residual,
        },
    )
    _write_manifest(out_dir, config, ["rate.csv", "summary.json", "manifest.json"])
    return 0


def _cmd_verify_bounds(config: dict) -> int:
    _check_keys(
        config,
        {"kind", "alpha", "replications", "zeta", "n", "eps_mu", "eps_pi", "d_constant"},
    )
    kind = config.get("kind", "risk-inequality")
    out_dir = _require(config, "out")
    seed = int(config.get("seed", 0))
    replications = int(config.get("replications", 500))
    alpha = config.get("alpha", 0.5)
    if isinstance(alpha, (list, tuple)):
        if len(alpha) != 1:
            raise ConfigError("verify-bounds takes a single alpha")
        alpha = alpha[0]
    alpha = _as_alpha(alpha)
    os.makedirs(out_dir, exist_ok=True)
    if kind == "risk-inequality":
        if alpha >= 1.0:
            raise ConfigError("the bound check needs alpha < 1")
        zeta = float(config.get("zeta", 0.1))
        n_obs = int(config.get("n", 5))
        try:
            report = check_risk_inequality(
                default_tiny_model(),
                alpha=alpha,
                n_obs=n_obs,
                n_replications=replications,
                zeta=zeta,
                seed=seed,
                csv_path=os.path.join(out_dir, "replications.csv"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        doc = {
            "kind": kind,
            "alpha": alpha,
            "zeta": zeta,
            "n": n_obs,
            "replications": replications,
            "violation_rate": report.violation_rate,
            "ok": report.violation_rate <= zeta + 0.02,
        }
    elif kind == "prior-mass":
        if alpha >= 1.0:
            raise ConfigError("the bound check needs alpha < 1")
        n_obs = int(config.get("n", 400))
        neigh = KLNeighborhoodSpec(
            eps_pi=float(config.get("eps_pi", 0.05)),
            eps_mu=float(config.get("eps_mu", 0.5)),
        )
        truth_bundle = generate("gmm_s22", {"n": n_obs}, seed)
        truth_means = truth_bundle.truth["means"]
        pi = truth_bundle.truth["pi"]
        bound = prior_mass_bound(
            truth_means,
            np.zeros(truth_means.shape[1]),
            50.0,
            neigh,
            alpha,
            n_obs,
            d_constant=float(config.get("d_constant", 2.0)),
            seed=seed,
        )
        prior = GmmPrior(np.zeros(truth_means.shape[1]), 50.0, pi)

        def replicate(rep):
            rep_seed = seed + rep
            s = Stream(rep_seed, 65)
            labels = s.categorical(pi, size=n_obs)
            y = truth_means[labels] + s.normal((n_obs, truth_means.shape[1]))
            cfg = AlphaConfig(alpha=alpha, max_iters=200, elbo_tol=1e-8, seed=rep_seed)
            state, _ = fit_gmm(y, prior, cfg)
            perm, _ = match_means(state.mu_tilde, truth_means)
            est = gmm_mixture_risk(
                state.mu_tilde[list(perm)],
                state.sigma_tilde_sq[list(perm)],
                truth_means,
                pi,
                alpha,
                seed=rep_seed,
            )
            return rep_seed, est.value

        results = _parallel_map(replicate, list(range(replications)))
        rows = [
            RiskCheckRow(
                replication=rep,
                seed=rep_seed,
                lhs=risk,
                rhs=bound.rhs,
                q_index=0,
                violated=bool(risk > bound.rhs),
            )
            for rep, (rep_seed, risk) in enumerate(results)
        ]
        write_check_rows(os.path.join(out_dir, "replications.csv"), rows)
        rate = sum(r.violated for r in rows) / len(rows)
        doc = {
            "kind": kind,
            "alpha": alpha,
            "n": n_obs,
            "replications": replications,
            "rhs": bound.rhs,
            "failure_prob": bound.failure_prob,
            "violation_rate": rate,
            "ok": rate <= max(0.05, bound.failure_prob),
        }
    else:
        raise ConfigError("verify-bounds kind must be 'risk-inequality' or 'prior-mass'")
    _write_json(os.path.join(out_dir, "report.json"), doc)
    _write_manifest(out_dir, config, ["replications.csv", "report.json", "manifest.json"])
    if config.get("strict") and not doc["ok"]:
        print("bound verification failed", file=sys.stderr)
        return 1
    return 0


def _cmd_report(config: dict) -> int:
    _check_keys(config, {"state", "vocab", "top_n"})
    state_path = _require(config, "state")
    out_dir = _require(config, "out")
    with open(state_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        validate_state(doc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    model = doc["model"]
    os.makedirs(out_dir, exist_ok=True)
    if model == "lda":
        lam = np.asarray(doc["state"]["lam"])
        n_top = int(config.get("top_n", 10))
        tops = top_words(lam, n_top)
        vocab = None
        if config.get("vocab"):
            vocab = read_vocab(config["vocab"])
        rows = []
        for t in range(tops.shape[0]):
            for rank, w in enumerate(tops[t]):
                token = vocab[w] if vocab else str(int(w))
                rows.append([t, rank, int(w), token])
        _write_csv(os.path.join(out_dir, "report.csv"), ["topic", "rank", "word_id", "token"], rows)
    elif model in ("hdr", "blm"):
        if model == "hdr":
            mu = np.asarray(doc["state"]["mu"])
            phi = np.asarray(doc["state"]["phi"])
            rows = [
                [j + 1, _fmt(phi[j] * mu[j]), _fmt(phi[j])]
                for j in range(mu.size)
            ]
            header = ["coefficient", "posterior_mean", "inclusion_prob"]
        else:
            mean = np.asarray(doc["state"]["beta_mean"])
            cov = np.asarray(doc["state"]["beta_cov"])
            rows = [
                [j + 1, _fmt(mean[j]), _fmt(np.sqrt(cov[j, j]))]
                for j in range(mean.size)
            ]
            header = ["coefficient", "posterior_mean", "posterior_sd"]
        _write_csv(os.path.join(out_dir, "report.csv"), header, rows)
    else:  # gmm
        mu = np.asarray(doc["state"]["mu_tilde"])
        sig = np.asarray(doc["state"]["sigma_tilde_sq"])
        rows = [
            [k] + [_fmt(v) for v in mu[k]] + [_fmt(sig[k])]
            for k in range(mu.shape[0])
        ]
        header = ["component"] + [f"mean{j + 1}" for j in range(mu.shape[1])] + ["spread_sq"]
        _write_csv(os.path.join(out_dir, "report.csv"), header, rows)
    _write_manifest(out_dir, config, ["report.csv", "manifest.json"])
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "sweep-alpha": _cmd_sweep_alpha,
    "rate-experiment": _cmd_rate_experiment,
    "verify-bounds": _cmd_verify_bounds,
    "report": _cmd_report,
}


def execute(config: dict) -> int:
    """Run one command from a resolved config dict. Returns the exit code."""
    try:
        command = config.get("command")
        if command not in _COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        if not config.get("out") and command in _COMMANDS:
            raise ConfigError("missing required config key 'out'")
        seed = config.get("seed", 0)
        if not isinstance(seed, (int,)) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        _thread_count()
        return _COMMANDS[command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphavb",
        description="Tempered variational inference experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=False, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base seed")
        p.add_argument("--alpha", default=None, help="temperature, or comma list for sweeps")
        p.add_argument("--config", dest="config_path", help="JSON config file")
        p.add_argument("--strict", action="store_true", help="nonzero exit on non-convergence")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--kind", choices=KINDS)
    common(p)

    p = sub.add_parser("fit", help="fit one model at one temperature")
    p.add_argument("--model", choices=FIT_MODELS)
    p.add_argument("--data", help="dataset file")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=None)
    common(p)

    p = sub.add_parser("sweep-alpha", help="fit across a temperature ladder")
    p.add_argument("--model", choices=FIT_MODELS)
    p.add_argument("--data", help="dataset file")
    common(p)

    p = sub.add_parser("rate-experiment", help="risk against sample size")
    p.add_argument("--model", choices=("blm", "gmm"), default=None)
    p.add_argument("--n-grid", dest="n_grid", help="comma-separated sample sizes")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=None)
    common(p)

    p = sub.add_parser("verify-bounds", help="replicated finite-sample bound checks")
    p.add_argument("--kind", choices=("risk-inequality", "prior-mass"), default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--zeta", type=float, default=None)
    common(p)

    p = sub.add_parser("report", help="tabulate a fitted state file")
    p.add_argument("--state", help="state.json path")
    p.add_argument("--vocab", help="vocabulary file for topic tables")
    p.add_argument("--top-n", dest="top_n", type=int, default=None)
    common(p)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    config = {}
    if getattr(args, "config_path", None):
        with open(args.config_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        config.update(loaded)
    for key, value in vars(args).items():
        if key == "config_path" or value is None:
            continue
        config[key] = value
    if isinstance(config.get("alpha"), str):
        parts = [v for v in config["alpha"].split(",") if v]
        try:
            values = [float(v) for v in parts]
        except ValueError:
            raise ConfigError(f"alpha must be numbers, got {config['alpha']!r}") from None
        if not values:
            raise ConfigError("alpha flag is empty")
        config["alpha"] = values if len(values) > 1 else values[0]
    if "n_grid" in config and isinstance(config["n_grid"], str):
        config["n_grid"] = [int(v) for v in config["n_grid"].split(",") if v]
    config.setdefault("seed", 0)
    config.setdefault("strict", False)
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _merge_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON config ({exc})", file=sys.stderr)
        return 2
    return execute(config)


if __name__ == "__main__":
    sys.exit(main())
