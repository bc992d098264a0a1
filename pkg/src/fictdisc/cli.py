"""Command-line entry point: ``fictdisc {gen-mdp,audit,train,compare-bias,eval}``.

Every subcommand takes an optional JSON ``--config``; explicit flags override
its fields.  Exit codes: 0 success, 1 audit failure, 2 usage or config error.
"""

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import audit
from . import estimators as est
from .core import average_reward, discounted_value, finite_horizon_value
from .dp import discounted_optimal, finite_horizon_optimal, relative_value_iteration
from .mdp import FIXTURES, Mdp, MdpValidationError, generate_mdp, load_fixture, load_mdp, mdp_from_dict, save_mdp
from .mixing import mixing_constants
from .softmax import policy_from_params
from .training import TrainConfig, run_exact_gradient_training, run_training

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SCHEMA_VERSION = 1
SUITES = ("gaps", "structure", "gradients", "estimators", "theorems")

AUDIT_DEFAULTS = {
    "fixtures": list(FIXTURES),
    "mdp_files": [],
    "generated": {"count": 0, "S": 3, "A": 2, "floor": 0.02, "seed0": 100},
    "policies": 20,
    "policy_scale": 2.0,
    "H_grid": [1, 2, 4, 8, 16, 32, 64, 128],
    "gamma_grid": [0.5, 0.9, 0.99, "1-1/H"],
    "seed": 0,
    "suites": list(SUITES),
    "estimator": {"H_grid": [2, 4], "gamma": 0.9, "beta": 0.5, "lam": 0.1, "thetas": 3, "samples": 2000},
    "gradients": {"lam_grid": [1.0, 10.0, 100.0], "gamma": 0.9, "pairs": 20},
    "theorems": {"H": 32, "sigma": 0.5, "epsilon": 0.05, "beta": 0.5, "K_max": 2000},
}

TRAIN_DEFAULTS = {
    "fixture": "fix1",
    "mdp_file": None,
    "algorithm": "dae",
    "H": 32,
    "sigma": 0.5,
    "epsilon": 0.05,
    "delta": 0.1,
    "beta": 0.5,
    "N": 1,
    "K_max": 1000,
    "log_every": 10,
    "seeds": [0],
    "exact": False,
    "certify_stop": True,
    "out_dir": ".",
}

BIAS_DEFAULTS = {
    "fixture": "fix2",
    "mdp_file": None,
    "H_grid": [8, 16, 32, 64, 128],
    "sigma": 0.5,
    "beta": 0.5,
    "lam": 0.0,
    "out": "bias.csv",
}


class ConfigError(ValueError):
    pass


def _comment(kind):
    return f"# fictdisc {kind} schema v{SCHEMA_VERSION}\n"


def _load_config(path, defaults):
    cfg = json.loads(json.dumps(defaults))
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(user) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for k, v in user.items():
            if isinstance(cfg.get(k), dict) and isinstance(v, dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
    return cfg


def _override(cfg, args, keys):
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _parse_list(text, cast=float):
    return [x if x.replace(" ", "") == "1-1/H" else cast(x) for x in text.split(",") if x.strip()]


def _resolve_mdp(fixture=None, mdp_file=None):
    if mdp_file:
        return Path(mdp_file).stem, load_mdp(mdp_file)
    return fixture, load_fixture(fixture)


def _run_tasks(fn, tasks, jobs):
    """Map ``fn`` over ``tasks`` and return results in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# gen-mdp


def cmd_gen_mdp(args):
    try:
        mdp = generate_mdp(args.S, args.A, args.seed, args.floor)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        save_mdp(mdp, args.out)
    else:
        sys.stdout.write(mdp.to_json())
    return EXIT_OK


# audit


def _audit_fixtures(cfg):
    out = []
    for name in cfg["fixtures"]:
        out.append((name, load_fixture(name).to_dict()))
    for path in cfg["mdp_files"]:
        out.append((Path(path).stem, load_mdp(path).to_dict()))
    gen = cfg["generated"]
    for i in range(gen["count"]):
        seed = gen["seed0"] + i
        S = gen["S"] if isinstance(gen["S"], int) else gen["S"][i % len(gen["S"])]
        A = gen["A"] if isinstance(gen["A"], int) else gen["A"][i % len(gen["A"])]
        out.append((f"gen-{S}x{A}-{seed}", generate_mdp(S, A, seed, gen["floor"]).to_dict()))
    return out


def _random_policies(mdp, n, scale, rng):
    return [policy_from_params(scale * rng.normal(size=(mdp.S, mdp.A))) for _ in range(n)]


def audit_task(task):
    """One (fixture, suite) unit of the audit; pure function of its inputs."""
    index, name, mdp_dict, suite, cfg = task
    mdp = mdp_from_dict(mdp_dict)
    consts = mixing_constants(mdp)
    rng = est.rng_for(cfg["seed"], index, SUITES.index(suite))
    if suite == "gaps":
        pols = _random_policies(mdp, cfg["policies"], cfg["policy_scale"], rng)
        return audit.audit_gap_lemmas(mdp, pols, cfg["H_grid"], cfg["gamma_grid"], name, consts)
    if suite == "structure":
        pols = _random_policies(mdp, cfg["policies"], cfg["policy_scale"], rng)
        return audit.audit_structure(mdp, pols, name, consts)
    if suite == "gradients":
        g = cfg["gradients"]
        recs = []
        thetas = [np.zeros((mdp.S, mdp.A))] + [rng.normal(size=(mdp.S, mdp.A)) for _ in range(4)]
        for lam in g["lam_grid"]:
            recs += audit.audit_domination(mdp, thetas, lam, g["gamma"], name, consts)
        pairs = []
        for _ in range(g["pairs"]):
            t1 = rng.normal(size=(mdp.S, mdp.A))
            step = rng.normal(size=t1.shape)
            pairs.append((t1, t1 + rng.uniform(0, 1) * step / np.linalg.norm(step)))
        recs += audit.audit_smoothness(mdp, pairs, g["lam_grid"][0], g["gamma"], name, consts)
        return recs
    if suite == "estimators":
        e = cfg["estimator"]
        thetas = [rng.normal(size=(mdp.S, mdp.A)) for _ in range(e["thetas"])]
        configs = [
            audit.EstimatorAuditConfig(H, e["gamma"], e["beta"], e["lam"], samples=e["samples"], seed=cfg["seed"])
            for H in e["H_grid"]
        ]
        return audit.audit_estimator_lemmas(mdp, thetas, configs, name, consts)
    if suite == "theorems":
        return theorem_records(mdp, name, cfg["theorems"], consts)
    raise ConfigError(f"unknown audit suite {suite!r}")


def theorem_records(mdp, name, t, consts=None):
    """Certified exact-gradient training followed by the composed finite-horizon bound."""
    consts = consts or mixing_constants(mdp)
    recs = []
    for alg in ("dae", "dd"):
        config = TrainConfig(alg, t["H"], t["sigma"], t["epsilon"], beta=t["beta"], K_max=t["K_max"])
        res = run_exact_gradient_training(mdp, config, consts)
        cert = res.certificate
        if cert is None:
            continue
        pi_hat = policy_from_params(res.theta)
        eps = max(cert.measured_gap, 0.0)
        rec = audit.compose_theorem_bounds(mdp, eps, t["H"], t["sigma"], alg, pi_hat, name, consts, res.setup.lam)
        rec.extras.update(k=cert.k, domination_bound=cert.bound)
        recs.append(rec)
        setting = "L2.7" if alg == "dae" else "P2.5"
        recs.append(
            audit.AuditRecord(setting, name, cert.measured_gap, cert.bound, H=t["H"], gamma=res.setup.gamma,
                              lam=res.setup.lam, theta_hash=audit.array_hash(res.theta))
        )  # fmt: skip
    return recs


def _validate_audit_cfg(cfg):
    for key in ("H_grid", "gamma_grid"):
        if not cfg[key]:
            raise ConfigError(f"{key} is empty")
    if cfg["policies"] < 1:
        raise ConfigError("policies must be at least 1")
    unknown = set(cfg["suites"]) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown audit suites {sorted(unknown)}")
    if not cfg["estimator"]["H_grid"]:
        raise ConfigError("estimator.H_grid is empty")
    if "seed" not in cfg or cfg["seed"] is None:
        raise ConfigError("a seed is required")


def cmd_audit(args):
    cfg = _load_config(args.config, AUDIT_DEFAULTS)
    if args.fixtures is not None:
        cfg["fixtures"] = [f for f in args.fixtures.split(",") if f]
    if args.mdp:
        cfg["mdp_files"] = args.mdp
    if args.H_grid is not None:
        cfg["H_grid"] = _parse_list(args.H_grid, int)
    if args.gamma_grid is not None:
        cfg["gamma_grid"] = _parse_list(args.gamma_grid)
    if args.suites is not None:
        cfg["suites"] = args.suites.split(",")
    _override(cfg, args, ["seed", "policies"])
    _validate_audit_cfg(cfg)
    fixtures = _audit_fixtures(cfg)
    tasks = [(i, name, d, suite, cfg) for i, (name, d) in enumerate(fixtures) for suite in cfg["suites"]]
    records = [r for batch in _run_tasks(audit_task, tasks, args.jobs) for r in batch]
    records = audit.sort_records(records)
    text = audit.records_to_csv(records)
    _write(args.out, text)
    failures = [r for r in records if not r.passed]
    missing = audit.missing_claims(records)
    print(f"audit: {len(records)} records, {len(failures)} failures", file=sys.stderr)
    if missing:
        print(f"audit: no records for claims {', '.join(missing)}", file=sys.stderr)
    for r in failures[:20]:
        print(f"FAIL {r.claim_id} {r.fixture} H={r.H} gamma={r.gamma} lhs={r.lhs!r} rhs={r.rhs!r}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


# train


def train_task(task):
    name, mdp_dict, cfg, seed = task
    mdp = mdp_from_dict(mdp_dict)
    config = TrainConfig(
        cfg["algorithm"], cfg["H"], cfg["sigma"], cfg["epsilon"], cfg["delta"], cfg["beta"], cfg["N"],
        cfg["K_max"], seed=seed, log_every=cfg["log_every"], certify_stop=cfg["certify_stop"],
    )  # fmt: skip
    run = run_exact_gradient_training if cfg["exact"] else run_training
    res = run(mdp, config)
    checkpoint = {
        "theta": res.theta.tolist(),
        "lambda": res.setup.lam,
        "fixture": name,
        "fixture_hash": mdp.digest(),
        "algorithm": cfg["algorithm"],
        "H": cfg["H"],
        "sigma": cfg["sigma"],
        "seed": seed,
        "iterations": res.iterations,
    }
    cert = None
    if res.certificate is not None:
        c = res.certificate
        pi_hat = policy_from_params(res.theta)
        rec = audit.compose_theorem_bounds(
            mdp, max(c.measured_gap, 0.0), cfg["H"], cfg["sigma"], cfg["algorithm"], pi_hat, name, lam=res.setup.lam
        )
        cert = {
            "k": c.k, "setting": c.setting, "grad_norm": c.grad_norm, "threshold": c.threshold,
            "domination_bound": c.bound, "measured_gap": c.measured_gap,
            "composed_claim": rec.claim_id, "composed_lhs": rec.lhs, "composed_rhs": rec.rhs, "composed_pass": rec.passed,
        }  # fmt: skip
    return _comment("trace") + res.trace.to_csv(), checkpoint, cert


def cmd_train(args):
    cfg = _load_config(args.config, TRAIN_DEFAULTS)
    _override(cfg, args, ["fixture", "mdp_file", "algorithm", "H", "sigma", "epsilon", "beta", "N", "K_max",
                          "log_every", "out_dir", "certify_stop"])  # fmt: skip
    if args.seeds is not None:
        cfg["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.exact:
        cfg["exact"] = True
    if not cfg["seeds"]:
        raise ConfigError("seeds is empty")
    name, mdp = _resolve_mdp(cfg["fixture"], cfg["mdp_file"])
    try:
        TrainConfig(cfg["algorithm"], cfg["H"], cfg["sigma"], cfg["epsilon"], cfg["delta"], cfg["beta"], cfg["N"])
    except est.ConfigError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(name, mdp.to_dict(), cfg, s) for s in cfg["seeds"]]
    for seed, (trace, ckpt, cert) in zip(cfg["seeds"], _run_tasks(train_task, tasks, args.jobs)):
        stem = f"{name}_{cfg['algorithm']}_seed{seed}"
        (out / f"{stem}_trace.csv").write_text(trace)
        (out / f"{stem}_theta.json").write_text(json.dumps(ckpt, indent=1) + "\n")
        if cert is not None:
            (out / f"{stem}_certificate.json").write_text(json.dumps(cert, indent=1) + "\n")
            status = "pass" if cert["composed_pass"] else "FAIL"
            print(f"{stem}: certified at k={cert['k']}, {cert['composed_claim']} {status}", file=sys.stderr)
        else:
            print(f"{stem}: no certificate within K_max", file=sys.stderr)
    return EXIT_OK


# compare-bias


def bias_task(task):
    mdp_dict, H, cfg = task
    mdp = mdp_from_dict(mdp_dict)
    return audit.bias_scaling_study(mdp, [H], cfg["sigma"], cfg["beta"], lam=cfg["lam"])[0]


def cmd_compare_bias(args):
    cfg = _load_config(args.config, BIAS_DEFAULTS)
    _override(cfg, args, ["fixture", "mdp_file", "sigma", "beta", "out"])
    if args.H_grid is not None:
        cfg["H_grid"] = _parse_list(args.H_grid, int)
    if not cfg["H_grid"]:
        raise ConfigError("H_grid is empty")
    _, mdp = _resolve_mdp(cfg["fixture"], cfg["mdp_file"])
    rows = _run_tasks(bias_task, [(mdp.to_dict(), H, cfg) for H in cfg["H_grid"]], args.jobs)
    buf = io.StringIO()
    buf.write(_comment("bias"))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(audit.BIAS_COLUMNS)
    for r in rows:
        w.writerow([r["H"]] + [repr(float(r[c])) for c in audit.BIAS_COLUMNS[1:]])
    _write(cfg["out"], buf.getvalue())
    if cfg["out"] != "-":
        stem = Path(cfg["out"])
        for col in audit.BIAS_COLUMNS[2:]:
            lines = [f"# H {col}"] + [f"{r['H']} {r[col]!r}" for r in rows]
            stem.with_name(f"{stem.stem}_{col}.dat").write_text("\n".join(lines) + "\n")
    return EXIT_OK


# eval


def cmd_eval(args):
    try:
        ckpt = json.loads(Path(args.theta).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {args.theta}: {exc}") from exc
    name, mdp = _resolve_mdp(args.fixture or ckpt.get("fixture"), args.mdp_file)
    if ckpt.get("fixture_hash") not in (None, mdp.digest()):
        raise ConfigError(f"checkpoint was trained on a different MDP (hash {ckpt['fixture_hash']})")
    theta = np.asarray(ckpt["theta"], dtype=float)
    if theta.shape != (mdp.S, mdp.A):
        raise ConfigError(f"theta shape {theta.shape} does not match the MDP")
    H = args.H or ckpt.get("H", 32)
    gamma = args.gamma if args.gamma is not None else 1 - H ** (-ckpt.get("sigma", 0.5))
    pi = policy_from_params(theta)
    rvi = relative_value_iteration(mdp)
    rows = [
        ("finite-horizon", H, "", float(finite_horizon_value(mdp, pi, H)), finite_horizon_optimal(mdp, H)[0]),
        ("discounted", "", gamma, float(discounted_value(mdp, pi, gamma)), discounted_optimal(mdp, gamma).value),
        ("average", "", "", float(average_reward(mdp, pi)), rvi.hi),
    ]
    buf = io.StringIO()
    buf.write(_comment("eval"))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("setting", "H", "gamma", "value", "optimum", "gap"))
    for setting, h, g, v, opt in rows:
        w.writerow((setting, h, "" if g == "" else repr(float(g)), repr(v), repr(float(opt)), repr(float(opt) - v)))
    _write(args.out, buf.getvalue())
    return EXIT_OK


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _default_jobs():
    try:
        return max(1, int(os.environ.get("FICTDISC_JOBS", "1")))
    except ValueError:
        return 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=_default_jobs(), help="worker processes (env FICTDISC_JOBS)")
    parser = argparse.ArgumentParser(prog="fictdisc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mdp", parents=[common], help="write a random MDP with floored transitions")
    p.add_argument("--S", type=int, required=True)
    p.add_argument("--A", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--floor", type=float, default=0.01)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_gen_mdp)

    p = sub.add_parser("audit", parents=[common], help="check every lemma bound and write the audit CSV")
    p.add_argument("--config")
    p.add_argument("--fixtures", help="comma-separated bundled fixtures (empty string for none)")
    p.add_argument("--mdp", action="append", help="additional MDP JSON file; repeatable")
    p.add_argument("--H-grid", dest="H_grid")
    p.add_argument("--gamma-grid", dest="gamma_grid", help='e.g. "0.5,0.9,1-1/H"')
    p.add_argument("--suites")
    p.add_argument("--policies", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("train", parents=[common], help="run DAE or DD REINFORCE and write traces and checkpoints")
    p.add_argument("--config")
    p.add_argument("--fixture")
    p.add_argument("--mdp-file", dest="mdp_file")
    p.add_argument("--algorithm", choices=("dae", "dd"))
    p.add_argument("--H", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--K-max", dest="K_max", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--seeds", help="comma-separated seeds, run in parallel")
    p.add_argument("--exact", action="store_true", default=None, help="use exact estimator expectations")
    p.add_argument("--no-certify-stop", dest="certify_stop", action="store_false", default=None,
                   help="keep iterating after the gradient threshold is crossed")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare-bias", parents=[common], help="measured estimator bias against the bounds along H")
    p.add_argument("--config")
    p.add_argument("--fixture")
    p.add_argument("--mdp-file", dest="mdp_file")
    p.add_argument("--H-grid", dest="H_grid")
    p.add_argument("--sigma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_compare_bias)

    p = sub.add_parser("eval", parents=[common], help="evaluate a theta checkpoint in all three settings")
    p.add_argument("--theta", required=True)
    p.add_argument("--fixture")
    p.add_argument("--mdp-file", dest="mdp_file")
    p.add_argument("--H", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, est.ConfigError, MdpValidationError, KeyError, FileNotFoundError) as exc:
        print(f"fictdisc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
