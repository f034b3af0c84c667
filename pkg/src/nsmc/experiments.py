"""Experiment protocols behind the command-line runner: convergence traces,
misspecification error tables, embedding clustering, semi-supervised
clustering on external CSVs, and the verification suite.

Each experiment resolves a flat key-value config (defaults < config file <
command-line overrides), runs a grid of independent cells, and writes tidy
CSV results. Cells of a grid may run in separate processes; assembly order
is fixed by the grid, so thread count never changes the output bytes.
"""

import dataclasses
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .activations import ActivationKind, parse_activation
from .baselines import make_nimc_objective, variance_stabilize
from .datagen import (EdgeSampleSet, GenerativeSpec, ResponseLaw, child_seed,
                      gen_features, gen_ground_truth, gen_mixture_features,
                      gen_similarity_labels, sample_edges, split_samples,
                      union_samples)
from .loss import make_objective
from .metrics import (clustering_error, kmeans, rel_error_matrix, rel_error_theta,
                      top_r_left_singular)
from .model import FeaturePool, WeightPair
from .optimizer import (GdConfig, dominant_curvature, fit_contraction_rate,
                        gd_minimize, init_near_truth, preplateau_prefix)
from . import verification as verif


# ---------------------------------------------------------------------------
# config schemas: key -> (parser tag, default); required keys default to None

SCHEMAS = {
    "converge": {
        "d": ("int", 10),
        "r": ("int", 3),
        "n": ("int", 400),
        "m": ("int", 2000),
        "radius_sq": ("float", 1.0),
        "phi1": ("str", "relu"),
        "phi2_grid": ("strlist", "relu,sigmoid,tanh"),
        "laws": ("strlist", "gaussian,binomial,poisson"),
        "sigma": ("float", 1.0),
        "n_binom": ("int", 20),
        "step": ("step", "auto"),
        "step_scale": ("float", 0.5),
        "max_iters": ("int", 150),
        "grad_tol": ("float", 1e-10),
        "fix_first_row": ("bool", False),
        "poisson_truth_scale": ("float", 0.6),
        "seeds": ("intlist", "1"),
    },
    "misspec": {
        "d": ("int", 50),
        "r": ("int", 3),
        "n": ("int", 400),
        "m": ("int", 1000),
        "radius_sq": ("float", 1.0),
        "law": ("str", "gaussian"),
        "tau_grid": ("floatlist", "0,0.2,0.4"),
        "nb_grid": ("intlist", "100,200,500"),
        "phi2_grid": ("strlist", "relu,sigmoid,tanh"),
        "methods": ("strlist", "nsmc,smc,nimc,imc"),
        "truth_scale": ("str", "raw"),
        "step": ("step", "auto"),
        "max_iters": ("int", 350),
        "max_iters_sq": ("int", 800),
        "grad_tol": ("float", 1e-8),
        "m_test": ("int", 1000),
        "seeds": ("intlist", "1,2,3,4,5,6,7,8,9,10"),
    },
    "cluster": {
        "d": ("int", 30),
        "r": ("int", 2),
        "n": ("int", 400),
        "m": ("int", 1000),
        "n_binom": ("int", 20),
        "k": ("int", 4),
        "center_scale": ("float", 1.2),
        "spread": ("float", 0.25),
        "radius_sq": ("float", 1.0),
        "step": ("step", "auto"),
        "max_iters": ("int", 400),
        "max_iters_sq": ("int", 800),
        "grad_tol": ("float", 1e-8),
        "restarts": ("int", 20),
        "seeds": ("intlist", "1,2,3,4,5"),
    },
    "semisup": {
        "dataset_csv": ("str", None),
        "label_col": ("str", None),
        "r": ("int", 2),
        "n": ("int", 1000),
        "m": ("int", 5000),
        "k": ("int", 0),  # 0 = number of distinct labels
        "one_hot": ("bool", False),
        "methods": ("strlist", "nsmc,nimc"),
        "step": ("step", "auto"),
        "max_iters": ("int", 300),
        "max_iters_sq": ("int", 600),
        "grad_tol": ("float", 1e-8),
        "restarts": ("int", 20),
        "pair_subsample": ("int", 0),  # 0 = exact sum over all pairs
        "seeds": ("intlist", "1"),
    },
    "verify": {
        "draws": ("int", 50),
        "fd_instances": ("int", 20),
        "score_draws": ("int", 10000),
        "m_stationarity": ("intlist", "500,2000"),
        "m_curvature": ("int", 500),
        "m_convergence": ("int", 1000),
        "seed": ("int", 1),
    },
}


class ConfigError(Exception):
    """Invalid or missing configuration; the CLI maps this to exit code 2."""


def _parse_value(tag, raw, key):
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "str":
            return str(raw)
        if tag == "bool":
            if isinstance(raw, bool):
                return raw
            if str(raw).strip().lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).strip().lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if tag == "step":
            s = str(raw).strip()
            return "auto" if s == "auto" else float(s)
        if tag == "intlist":
            return [int(tok) for tok in str(raw).split(",") if tok.strip() != ""]
        if tag == "floatlist":
            return [float(tok) for tok in str(raw).split(",") if tok.strip() != ""]
        if tag == "strlist":
            return [tok.strip().lower() for tok in str(raw).split(",") if tok.strip() != ""]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {key!r}: cannot parse {raw!r} ({exc})") from None
    raise ConfigError(f"field {key!r}: unknown schema tag {tag!r}")


def resolve_config(subcommand, file_values=None, overrides=None):
    """Defaults, overridden by a config file section, overridden by flags.

    Raises ConfigError naming the offending field for unknown keys, parse
    failures, or missing required values.
    """
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    schema = SCHEMAS[subcommand]
    resolved = {}
    for key, (tag, default) in schema.items():
        resolved[key] = None if default is None else _parse_value(tag, default, key)
    for source in (file_values or {}), (overrides or {}):
        for key, raw in source.items():
            if raw is None:
                continue
            if key not in schema:
                raise ConfigError(f"unknown field {key!r} for subcommand {subcommand!r}")
            resolved[key] = _parse_value(schema[key][0], raw, key)
    for key, value in resolved.items():
        if value is None:
            raise ConfigError(f"missing required field {key!r}")
    return resolved


def config_text(subcommand, cfg):
    lines = [f"[{subcommand}]"]
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(subcommand, cfg):
    return hashlib.sha256(config_text(subcommand, cfg).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# report plumbing


class ExperimentReport:
    """Long-format metric rows plus per-(experiment, method, metric) means."""

    def __init__(self, experiment, cfg_hash):
        self.experiment = experiment
        self.cfg_hash = cfg_hash
        self.rows = []  # (experiment, method, seed, metric, value)

    def add(self, experiment, method, seed, metric, value):
        self.rows.append((experiment, method, str(seed), metric, float(value)))

    def aggregates(self):
        groups = {}
        for exp, method, seed, metric, value in self.rows:
            groups.setdefault((exp, method, metric), []).append(value)
        return {key: sum(vals) / len(vals) for key, vals in sorted(groups.items())}

    def value(self, experiment, method, metric):
        return self.aggregates()[(experiment, method, metric)]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("experiment,method,seed,metric,value,config_hash\n")
            for exp, method, seed, metric, value in self.rows:
                fh.write(f"{exp},{method},{seed},{metric},{value!r},{self.cfg_hash}\n")
            for (exp, method, metric), mean in self.aggregates().items():
                fh.write(f"{exp},{method},mean,{metric},{mean!r},{self.cfg_hash}\n")


def _map_cells(worker, cells, threads):
    if threads <= 1 or len(cells) <= 1:
        return [worker(cell) for cell in cells]
    import multiprocessing

    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(threads, len(cells)), mp_context=ctx) as ex:
        return list(ex.map(worker, cells))


def _resolve_step(cfg_step, objective, start, scale=1.0):
    """Explicit step passes through; "auto" becomes scale / |dominant
    curvature| at the start, which also covers starts where the dominant
    curvature is negative (its magnitude bounds the gradient Lipschitz
    constant)."""
    if cfg_step != "auto":
        return float(cfg_step)
    return scale / abs(dominant_curvature(objective, start))


def _law_from_cfg(name, cfg, tau=None, n_binom=None):
    if name == "gaussian":
        if tau is not None:
            return ResponseLaw.gaussian_misspec(tau)
        return ResponseLaw.gaussian(cfg.get("sigma", 1.0))
    if name == "binomial":
        return ResponseLaw.binomial(n_binom if n_binom is not None else cfg["n_binom"])
    if name == "poisson":
        return ResponseLaw.poisson()
    raise ConfigError(f"unknown law {name!r}")


# ---------------------------------------------------------------------------
# convergence traces


def _converge_cell(cell):
    cfg = cell["cfg"]
    law = _law_from_cfg(cell["law"], cfg)
    a1 = parse_activation(cfg["phi1"])
    a2 = parse_activation(cell["phi2"])
    seed = cell["seed"]
    truth = gen_ground_truth(cfg["d"], cfg["d"], cfg["r"],
                             seed=child_seed(seed, "weights"))
    if cell["law"] == "poisson" and cfg["poisson_truth_scale"] != 1.0:
        # keeps exp(theta) within the poisson sampler's range
        s = cfg["poisson_truth_scale"]
        truth = WeightPair(s * truth.U, s * truth.V)
    spec = GenerativeSpec(truth, a1, a2, law, cfg["n"], cfg["n"], cfg["m"], seed=seed)
    split = split_samples(spec)
    objective = make_objective(a1, a2, split.omega, split.omega_prime,
                               split.pool, split.pool_prime,
                               fix_first_row=cfg["fix_first_row"])
    start = init_near_truth(truth, cfg["radius_sq"],
                            fix_first_row=cfg["fix_first_row"],
                            seed=child_seed(seed, "init"))
    # conservative multiple of the start-point curvature estimate; curvature
    # grows along the path, so the bare estimate overshoots
    step = _resolve_step(cfg["step"], objective, start, scale=cfg["step_scale"])
    gd_cfg = GdConfig(step=step, max_iters=cfg["max_iters"],
                      grad_tol=cfg["grad_tol"], trace_truth=truth)
    _, trace = gd_minimize(objective, start, gd_cfg)
    rho, r2 = fit_contraction_rate(preplateau_prefix(trace), return_r2=True)
    return {
        "name": f"converge_{cell['law']}_{cell['phi2']}",
        "seed": seed,
        "rho": rho,
        "r2": r2,
        "final_dist_sq": trace.dist_sq[-1],
        "trace": (trace.iters, trace.loss, trace.grad_norm, trace.dist_sq, trace.step),
    }


def run_convergence(cfg, out_dir, threads=1):
    os.makedirs(out_dir, exist_ok=True)
    cells = [
        {"cfg": cfg, "law": law, "phi2": phi2, "seed": seed}
        for law in cfg["laws"]
        for phi2 in cfg["phi2_grid"]
        for seed in cfg["seeds"]
    ]
    report = ExperimentReport("converge", config_hash("converge", cfg))
    for out in _map_cells(_converge_cell, cells, threads):
        report.add(out["name"], "nsmc", out["seed"], "rho", out["rho"])
        report.add(out["name"], "nsmc", out["seed"], "r2", out["r2"])
        report.add(out["name"], "nsmc", out["seed"], "final_dist_sq", out["final_dist_sq"])
        iters, loss, gnorm, dsq, step = out["trace"]
        path = os.path.join(out_dir, f"trace_{out['name']}_seed{out['seed']}.csv")
        with open(path, "w") as fh:
            fh.write("iter,loss,grad_norm,dist_sq\n")
            for row in zip(iters, loss, gnorm, dsq):
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")
    report.write_csv(os.path.join(out_dir, "results.csv"))
    return report


# ---------------------------------------------------------------------------
# misspecification tables


def _misspec_truth(cfg, seed):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=child_seed(seed, "weights")))
    if cfg["truth_scale"] == "raw":
        # unnormalized Gaussian factors: the strong-signal regime of the
        # error-table protocol
        return WeightPair(rng.standard_normal((cfg["d"], cfg["r"])),
                          rng.standard_normal((cfg["d"], cfg["r"])))
    scale = float(cfg["truth_scale"])
    base = gen_ground_truth(cfg["d"], cfg["d"], cfg["r"], seed=child_seed(seed, "weights"))
    return WeightPair(scale * base.U, scale * base.V)


def _transform_for_squared(law_name, y, cfg, n_binom):
    if law_name == "binomial":
        return variance_stabilize("binomial_arcsin", y, n_binom=n_binom)
    if law_name == "poisson":
        return variance_stabilize("poisson_sqrt", y)
    return y


def _misspec_cell(cell):
    cfg = cell["cfg"]
    law_name = cell["law"]
    seed = cell["seed"]
    tau = cell.get("tau")
    n_binom = cell.get("n_binom")
    a1 = ActivationKind.RELU
    a2 = parse_activation(cell.get("phi2", "relu"))
    law = _law_from_cfg(law_name, cfg, tau=tau, n_binom=n_binom)
    truth = _misspec_truth(cfg, seed)
    spec = GenerativeSpec(truth, a1, a2, law, cfg["n"], cfg["n"], cfg["m"], seed=seed)
    split = split_samples(spec)
    merged, merged_pool = union_samples(split)
    y_sq = _transform_for_squared(law_name, merged.y, cfg, n_binom)
    merged_sq = EdgeSampleSet(merged.row_idx, merged.col_idx, y_sq, "union")
    start = init_near_truth(truth, cfg["radius_sq"], seed=child_seed(seed, "init"))

    test_pool = gen_features(cfg["n"], cfg["n"], cfg["d"], cfg["d"],
                             seed=child_seed(seed, "test"))
    rng_t = np.random.default_rng(np.random.SeedSequence(entropy=child_seed(seed, "test"),
                                                         spawn_key=(9,)))
    ti = rng_t.integers(0, cfg["n"], size=cfg["m_test"])
    tj = rng_t.integers(0, cfg["n"], size=cfg["m_test"])
    test_pairs = [(test_pool.X[i], test_pool.Z[j]) for i, j in zip(ti, tj)]

    ident = ActivationKind.IDENTITY
    results = {}
    for method in cell["methods"]:
        if method == "nsmc":
            obj = make_objective(a1, a2, split.omega, split.omega_prime,
                                 split.pool, split.pool_prime)
            iters, ea1, ea2 = cfg["max_iters"], a1, a2
        elif method == "smc":
            obj = make_objective(ident, ident, split.omega, split.omega_prime,
                                 split.pool, split.pool_prime)
            iters, ea1, ea2 = cfg["max_iters"], ident, ident
        elif method == "nimc":
            obj = make_nimc_objective(a2, a2, merged_sq, merged_pool)
            iters, ea1, ea2 = cfg["max_iters_sq"], a2, a2
        elif method == "imc":
            obj = make_nimc_objective(ident, ident, merged_sq, merged_pool)
            iters, ea1, ea2 = cfg["max_iters_sq"], ident, ident
        else:
            raise ConfigError(f"unknown method {method!r}")
        step = _resolve_step(cfg["step"], obj, start)
        W, _ = gd_minimize(obj, start, GdConfig(step=step, max_iters=iters,
                                                grad_tol=cfg["grad_tol"]))
        results[method] = {
            "e_u": rel_error_matrix(W.U, truth.U),
            "e_v": rel_error_matrix(W.V, truth.V),
            "e_theta": rel_error_theta(W, truth, a1, a2, test_pairs,
                                       est_a1=ea1, est_a2=ea2),
        }
    return {"name": cell["name"], "seed": seed, "results": results}


def misspec_cells(cfg):
    """Grid cells of the misspecification experiment for cfg['law']."""
    law = cfg["law"]
    cells = []
    if law in ("gaussian", "all"):
        for tau in cfg["tau_grid"]:
            tag = f"misspec_gaussian_tau{tau:g}"
            for seed in cfg["seeds"]:
                cells.append({"cfg": cfg, "law": "gaussian", "tau": tau,
                              "seed": seed, "name": tag, "methods": cfg["methods"]})
    if law in ("binomial", "all"):
        for nb in cfg["nb_grid"]:
            tag = f"misspec_binomial_nb{nb}"
            for seed in cfg["seeds"]:
                cells.append({"cfg": cfg, "law": "binomial", "n_binom": nb,
                              "seed": seed, "name": tag, "methods": cfg["methods"]})
    if law in ("poisson", "all"):
        for phi2 in cfg["phi2_grid"]:
            tag = f"misspec_poisson_{phi2}"
            for seed in cfg["seeds"]:
                cells.append({"cfg": cfg, "law": "poisson", "phi2": phi2,
                              "seed": seed, "name": tag, "methods": cfg["methods"]})
    if not cells:
        raise ConfigError(f"field 'law': unknown value {law!r}")
    return cells


def run_misspec(cfg, out_dir, threads=1):
    if cfg["law"] == "poisson" and cfg["truth_scale"] == "raw":
        # exp(theta) would overflow the poisson mean at raw scale
        cfg = dict(cfg, truth_scale="1")
    os.makedirs(out_dir, exist_ok=True)
    report = ExperimentReport("misspec", config_hash("misspec", cfg))
    for out in _map_cells(_misspec_cell, misspec_cells(cfg), threads):
        for method, metrics in out["results"].items():
            for metric, value in metrics.items():
                report.add(out["name"], method, out["seed"], metric, value)
    report.write_csv(os.path.join(out_dir, "results.csv"))
    return report


# ---------------------------------------------------------------------------
# clustering of embeddings


class _Split:
    """Duck-typed stand-in for SampleSplit over custom pools."""

    def __init__(self, omega, omega_prime, pool, pool_prime):
        self.omega = omega
        self.omega_prime = omega_prime
        self.pool = pool
        self.pool_prime = pool_prime


def _corner_centers(W, k, scale):
    """k mixture centers inside the column space of W, at sign corners of an
    orthonormal basis, so the embedded clusters are separated by design."""
    q, _ = np.linalg.qr(W)
    r = q.shape[1]
    signs = np.array([[1.0 if (idx >> p) & 1 else -1.0 for p in range(r)]
                      for idx in range(k)])
    if k > 2**r:
        raise ConfigError(f"k={k} clusters exceed the 2^r={2**r} embedding corners")
    return scale * signs @ q.T


def _cluster_cell(cell):
    cfg = cell["cfg"]
    seed = cell["seed"]
    a = ActivationKind.TANH
    d, r, n, K = cfg["d"], cfg["r"], cfg["n"], cfg["k"]
    truth = gen_ground_truth(d, d, r, seed=child_seed(seed, "weights"))
    centers_x = _corner_centers(truth.U, K, cfg["center_scale"])
    centers_z = _corner_centers(truth.V, K, cfg["center_scale"])
    x_feats, x_labels = gen_mixture_features(
        n, d, centers_x, cfg["spread"], seed=child_seed(seed, "features"))
    z_feats, z_labels = gen_mixture_features(
        n, d, centers_z, cfg["spread"], seed=child_seed(seed, "features") + 1)
    xp_feats, _ = gen_mixture_features(
        n, d, centers_x, cfg["spread"], seed=child_seed(seed, "features_primed"))
    zp_feats, _ = gen_mixture_features(
        n, d, centers_z, cfg["spread"], seed=child_seed(seed, "features_primed") + 1)
    pool = FeaturePool(x_feats, z_feats)
    pool_p = FeaturePool(xp_feats, zp_feats)
    law = ResponseLaw.binomial(cfg["n_binom"])
    omega = sample_edges(pool, truth, a, a, law, cfg["m"],
                         seed=child_seed(seed, "edges"), pool_ref="pool")
    omega_p = sample_edges(pool_p, truth, a, a, law, cfg["m"],
                           seed=child_seed(seed, "edges_primed"), pool_ref="pool_prime")
    start = init_near_truth(truth, cfg["radius_sq"], seed=child_seed(seed, "init"))

    merged, merged_pool = union_samples(_Split(omega, omega_p, pool, pool_p))
    y_sq = variance_stabilize("binomial_arcsin", merged.y, n_binom=cfg["n_binom"])
    merged_sq = EdgeSampleSet(merged.row_idx, merged.col_idx, y_sq, "union")

    estimates = {"truth": truth}
    obj = make_objective(a, a, omega, omega_p, pool, pool_p)
    W, _ = gd_minimize(obj, start, GdConfig(step=_resolve_step(cfg["step"], obj, start),
                                            max_iters=cfg["max_iters"],
                                            grad_tol=cfg["grad_tol"]))
    estimates["nsmc"] = W
    objn = make_nimc_objective(a, a, merged_sq, merged_pool)
    Wn, _ = gd_minimize(objn, start, GdConfig(step=_resolve_step(cfg["step"], objn, start),
                                              max_iters=cfg["max_iters_sq"],
                                              grad_tol=cfg["grad_tol"]))
    estimates["nimc"] = Wn

    from .activations import phi as act

    out = {"seed": seed, "errors": {}, "coords": {}}
    for method, wp in estimates.items():
        emb_x = act(a, x_feats @ wp.U)
        emb_z = act(a, z_feats @ wp.V)
        coords_x = top_r_left_singular(emb_x, min(2, r))
        coords_z = top_r_left_singular(emb_z, min(2, r))
        pred_x = kmeans(coords_x, K, restarts=cfg["restarts"], seed=child_seed(seed, "init") + 7)
        pred_z = kmeans(coords_z, K, restarts=cfg["restarts"], seed=child_seed(seed, "init") + 8)
        out["errors"][method] = (clustering_error(pred_x, x_labels),
                                 clustering_error(pred_z, z_labels))
        out["coords"][method] = (coords_x, x_labels, coords_z, z_labels)
    return out


def run_cluster(cfg, out_dir, threads=1):
    os.makedirs(out_dir, exist_ok=True)
    report = ExperimentReport("cluster", config_hash("cluster", cfg))
    cells = [{"cfg": cfg, "seed": seed} for seed in cfg["seeds"]]
    outs = _map_cells(_cluster_cell, cells, threads)
    for out in outs:
        for method, (err_x, err_z) in out["errors"].items():
            report.add("cluster", method, out["seed"], "cluster_err_x", err_x)
            report.add("cluster", method, out["seed"], "cluster_err_z", err_z)
    # 2-d coordinates of the first seed, for external plotting
    first = outs[0]
    for side in ("x", "z"):
        path = os.path.join(out_dir, f"coords_{side}.csv")
        with open(path, "w") as fh:
            fh.write("method,label,iota1,iota2\n")
            for method in ("nimc", "nsmc", "truth"):
                coords_x, x_labels, coords_z, z_labels = first["coords"][method]
                coords, labels = (coords_x, x_labels) if side == "x" else (coords_z, z_labels)
                for lab, row in zip(labels, coords):
                    sec = float(row[1]) if coords.shape[1] > 1 else 0.0
                    fh.write(f"{method},{lab},{float(row[0])!r},{sec!r}\n")
    report.write_csv(os.path.join(out_dir, "results.csv"))
    return report


# ---------------------------------------------------------------------------
# semi-supervised clustering on an external dataset


def load_dataset_csv(path, label_col, one_hot=False):
    """Numeric feature matrix and integer labels (1..K) from a CSV file.

    Non-numeric feature cells raise with the 1-based line number, unless
    one_hot is set, in which case string-valued columns are one-hot encoded
    (categories in sorted order).
    """
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_col not in header:
            raise ConfigError(f"{path}: label column {label_col!r} not found "
                              f"(columns: {', '.join(header)})")
        lab_idx = header.index(label_col)
        raw_rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(tok.strip() == "" for tok in row):
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{line_no}: expected {len(header)} fields, "
                                  f"got {len(row)}")
            raw_rows.append((line_no, [tok.strip() for tok in row]))
    if not raw_rows:
        raise ConfigError(f"{path}: no data rows")

    feat_idx = [i for i in range(len(header)) if i != lab_idx]
    columns = []
    for i in feat_idx:
        vals = [row[i] for _, row in raw_rows]
        try:
            columns.append(np.array([float(v) for v in vals])[:, None])
        except ValueError:
            if not one_hot:
                bad_line = next(ln for ln, row in raw_rows
                                if not _is_float(row[i]))
                bad_val = next(row[i] for ln, row in raw_rows if ln == bad_line)
                raise ConfigError(
                    f"{path}:{bad_line}: non-numeric value {bad_val!r} in column "
                    f"{header[i]!r} (set one_hot = true to encode categoricals)"
                ) from None
            cats = sorted(set(vals))
            block = np.zeros((len(vals), len(cats)))
            lookup = {c: j for j, c in enumerate(cats)}
            for rix, v in enumerate(vals):
                block[rix, lookup[v]] = 1.0
            columns.append(block)
    features = np.hstack(columns)
    labels_raw = [row[lab_idx] for _, row in raw_rows]
    classes = sorted(set(labels_raw))
    lab_map = {c: j + 1 for j, c in enumerate(classes)}
    labels = np.array([lab_map[v] for v in labels_raw], dtype=int)
    return features, labels


def _is_float(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def standardize_columns(features):
    """Per-column z-scoring; constant columns are merely centered."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    return (features - mean) / std


def make_blobs_csv(path, n=200, d=6, k=2, separation=12.0, seed=0, label_col="label",
                   anisotropy=0.0, imbalance=0.0):
    """Synthetic stand-in dataset: k Gaussian blobs.

    anisotropy > 0 draws per-cluster, per-coordinate lognormal scales (real
    tabular clusters are rarely isotropic); imbalance > 0 skews the cluster
    sizes geometrically.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    centers = separation * rng.standard_normal((k, d))
    if imbalance > 0:
        weights = (1.0 + imbalance) ** -np.arange(k)
        weights /= weights.sum()
        labels = rng.choice(k, size=n, p=weights)
    else:
        labels = rng.integers(0, k, size=n)
    scales = np.ones((k, d))
    if anisotropy > 0:
        scales = np.exp(anisotropy * rng.standard_normal((k, d)))
    feats = centers[labels] + scales[labels] * rng.standard_normal((n, d))
    with open(path, "w") as fh:
        fh.write(",".join(f"f{c}" for c in range(d)) + f",{label_col}\n")
        for row, lab in zip(feats, labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",c{lab + 1}\n")
    return path


def run_semisup(cfg, out_dir, threads=1):
    os.makedirs(out_dir, exist_ok=True)
    features, labels = load_dataset_csv(cfg["dataset_csv"], cfg["label_col"],
                                        one_hot=cfg["one_hot"])
    features = standardize_columns(features)
    n_items, d = features.shape
    K = cfg["k"] if cfg["k"] > 0 else int(labels.max())
    a = ActivationKind.TANH
    report = ExperimentReport("semisup", config_hash("semisup", cfg))
    sub = cfg["pair_subsample"] if cfg["pair_subsample"] > 0 else None

    for seed in cfg["seeds"]:
        n_set = min(cfg["n"], n_items)
        rng_items = np.random.default_rng(
            np.random.SeedSequence(entropy=child_seed(seed, "features")))
        set_a = rng_items.choice(n_items, size=n_set, replace=False)
        set_b = rng_items.choice(n_items, size=n_set, replace=False)

        def build_edges(item_set, stream_name):
            rng_e = np.random.default_rng(
                np.random.SeedSequence(entropy=child_seed(seed, stream_name)))
            ii = rng_e.integers(0, len(item_set), size=cfg["m"])
            jj = rng_e.integers(0, len(item_set), size=cfg["m"])
            pool = FeaturePool(features[item_set], features[item_set])
            y = gen_similarity_labels(labels[item_set], list(zip(ii, jj)))
            return EdgeSampleSet(ii, jj, y, stream_name), pool

        omega, pool = build_edges(set_a, "edges")
        omega_p, pool_p = build_edges(set_b, "edges_primed")

        rng_init = np.random.default_rng(
            np.random.SeedSequence(entropy=child_seed(seed, "init")))
        U0 = rng_init.standard_normal((d, cfg["r"])) / np.sqrt(d)
        start = WeightPair(U0, U0)

        from .activations import phi as act

        for method in cfg["methods"]:
            if method == "nsmc":
                obj = make_objective(a, a, omega, omega_p, pool, pool_p, tied=True,
                                     pair_subsample=sub,
                                     subsample_seed=child_seed(seed, "test"))
                iters = cfg["max_iters"]
            elif method == "nimc":
                merged, merged_pool = union_samples(_Split(omega, omega_p, pool, pool_p))
                obj = make_nimc_objective(a, a, merged, merged_pool, tied=True)
                iters = cfg["max_iters_sq"]
            else:
                raise ConfigError(f"unknown method {method!r}")
            # random far-from-minimizer starts can sit in concave regions,
            # so the step comes from the curvature magnitude
            step = _resolve_step(cfg["step"], obj, start, scale=0.5)
            gd_cfg = GdConfig(step=step, max_iters=iters, grad_tol=cfg["grad_tol"])
            W, _ = gd_minimize(obj, start, gd_cfg)
            emb = act(a, features @ W.U)
            coords = top_r_left_singular(emb, min(cfg["r"], min(emb.shape)))
            pred = kmeans(coords, K, restarts=cfg["restarts"],
                          seed=child_seed(seed, "mixture"))
            err = clustering_error(pred, labels)
            report.add("semisup", method, seed, "cluster_err", err)
    report.write_csv(os.path.join(out_dir, "results.csv"))
    return report


# ---------------------------------------------------------------------------
# verification suite


def run_verify(cfg, out_dir, threads=1):
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg["seed"]
    draws = cfg["draws"]

    w_small = gen_ground_truth(6, 5, 2, seed=child_seed(seed, "weights"))
    spec = GenerativeSpec(w_small, ActivationKind.SIGMOID, ActivationKind.TANH,
                          ResponseLaw.binomial(20), 400, 400, 500, seed=seed)
    spec_g = dataclasses.replace(spec, law=ResponseLaw.gaussian(1.0))
    w_curv = gen_ground_truth(8, 8, 2, seed=child_seed(seed, "weights"))
    spec_c = GenerativeSpec(w_curv, ActivationKind.SIGMOID, ActivationKind.TANH,
                            ResponseLaw.gaussian(1.0), 400, 400,
                            cfg["m_curvature"], seed=seed + 1)
    spec_r = dataclasses.replace(spec_c, a1=ActivationKind.RELU,
                                 a2=ActivationKind.SIGMOID)
    spec_i = dataclasses.replace(spec_c, a1=ActivationKind.IDENTITY,
                                 a2=ActivationKind.IDENTITY)
    truth = gen_ground_truth(10, 10, 3, seed=child_seed(seed, "weights"))
    spec_t4 = GenerativeSpec(truth, ActivationKind.RELU, ActivationKind.RELU,
                             ResponseLaw.gaussian(1.0), 400, 400,
                             cfg["m_convergence"], seed=seed + 2)

    planned = [
        ("grad_fd", lambda: verif.check_grad_fd(n_instances=cfg["fd_instances"])),
        ("hessian_fd", lambda: verif.check_hessian_fd(n_instances=cfg["fd_instances"])),
        ("score_mean_zero", lambda: verif.check_score_mean_zero(spec, cfg["score_draws"])),
        ("stationarity", lambda: verif.check_stationarity(
            spec_g, draws, m_grid=tuple(cfg["m_stationarity"]))),
        ("curvature", lambda: verif.check_curvature(spec_c, draws)),
        ("curvature", lambda: verif.check_curvature(spec_r, draws)),
        ("curvature_degenerate", lambda: verif.check_curvature_degenerate(spec_i, draws)),
        ("convergence", lambda: verif.check_linear_convergence(spec_t4)),
    ]

    checks_path = os.path.join(out_dir, "checks.csv")
    if os.path.exists(checks_path):
        os.remove(checks_path)
    report = ExperimentReport("verify", config_hash("verify", cfg))
    all_passed = True
    for name, run_check in planned:
        try:
            res = run_check()
        except Exception as exc:  # a crashed check is a failed check
            res = verif.McCheckResult(name=name, statistic=float("nan"),
                                      standard_error=float("nan"), n_draws=0,
                                      passed=False, description=f"error: {exc}")
        verif.append_check_csv(res, checks_path)
        report.add("verify", res.name, seed, "statistic", res.statistic)
        report.add("verify", res.name, seed, "pass", 1.0 if res.passed else 0.0)
        all_passed &= res.passed
    report.write_csv(os.path.join(out_dir, "results.csv"))
    return report, all_passed


RUNNERS = {
    "converge": run_convergence,
    "misspec": run_misspec,
    "cluster": run_cluster,
    "semisup": run_semisup,
}
