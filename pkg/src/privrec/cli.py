"""Command-line harness.

Subcommands: generate, validate, train-weights, recommend, sweep, localpipe.

Any option may also come from a JSON ``--config`` file (keys use
underscores, e.g. ``"epsilon_grid"``); options given on the command line
win. Every command writes ``manifest.json`` to its output directory with
the resolved configuration, so rerunning with the manifest's config
reproduces the outputs byte for byte (``timing.csv`` excepted: it holds
wall-clock latencies).

Exit codes: 0 success, 1 usage error, 2 data error, 3 privacy budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from urllib.parse import quote

from . import __version__
from ._rng import make_rng
from .dp_noise import NoiseConfig, PrivacyLedger, make_privatizer
from .errors import BudgetExhaustedError, DataError
from .evaluation import (
    compare_mechanisms,
    comparison_to_csv,
    prepare,
    reports_to_csv,
    reports_to_long,
    run_sweep,
    timing_to_csv,
    trend_test,
)
from .feature_store import Catalog, load_catalog, read_catalog, validate, write_catalog
from .fusion import FusionWeights, TrainingConfig, fuse_matrix, train_weights, training_loss
from .local_privacy import Template, cluster_profiles, perturb_profile, standardize
from .scoring import DEFAULT_CANDIDATES, _mean_of_positives, rank_top_k, retrieve_candidates
from .strategies import CHAIN_THRESHOLD, cf_recommend, content_recommend, group_recommend, hybrid_recommend
from .synthetic import SynthSpec, synthesize

log = logging.getLogger("privrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3

DEFAULTS = {
    "generate": {"users": 100, "videos": 500, "dim": 16, "topics": 5, "noise": 0.1},
    "validate": {},
    "train-weights": {"steps": 200, "learning_rate": 0.1},
    "recommend": {
        "strategy": "pipeline", "mechanism": "none", "k": 10, "m": DEFAULT_CANDIDATES,
        "epsilon": 1.0, "sensitivity": 1.0, "omega_floor": 0.01, "budget": None,
        "blend": 0.5, "neighbor_count": 10, "chain": False, "chain_threshold": CHAIN_THRESHOLD,
        "half_life": None, "train_weights": False,
    },
    "sweep": {
        "mechanisms": ["uniform", "adaptive"], "epsilon_grid": [0.1, 0.5, 1.0, 5.0], "k": 10,
        "trials": 50, "m": DEFAULT_CANDIDATES, "sensitivity": 1.0, "omega_floor": 0.01,
        "budget": None, "holdout_fraction": 0.3, "jobs": 1, "train_weights": False,
    },
    "localpipe": {"epsilon": 1.0, "grid_step": 0.1, "clusters": 2, "max_iters": 100},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _flag(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = _Parser(prog="privrec", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"privrec {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON file with default option values", default=S)
        sp.add_argument("--seed", type=int, default=S, help="master seed (required)")
        sp.add_argument("--out", default=S, help="output directory")
        if data:
            src = sp.add_argument_group("data source (exactly one)")
            src.add_argument("--dataset", default=S, help="JSONL dataset path")
            src.add_argument("--synth", type=json.loads, default=S,
                             help='inline synthesis spec, e.g. \'{"users": 50, "videos": 200}\'')

    def weights(sp):
        sp.add_argument("--weights", default=S, help="fusion weights JSON file")
        sp.add_argument("--train-weights", type=_flag, default=S, help="fit weights on the dataset first")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g, data=False)
    for name, typ in (("users", int), ("videos", int), ("dim", int), ("topics", int), ("noise", float),
                      ("interactions-per-user", int), ("affinity", float), ("bias", float),
                      ("concentration", float)):
        g.add_argument(f"--{name}", type=typ, default=S)

    v = sub.add_parser("validate", help="list catalog invariant violations")
    v.add_argument("--dataset", default=S)
    v.add_argument("--config", default=S)

    t = sub.add_parser("train-weights", help="fit modality fusion weights")
    common(t)
    t.add_argument("--initial", default=S, help="initial weights JSON file (default: uniform)")
    t.add_argument("--steps", type=int, default=S)
    t.add_argument("--learning-rate", type=float, default=S)

    r = sub.add_parser("recommend", help="rank videos for every user (or a group)")
    common(r)
    weights(r)
    r.add_argument("--strategy", choices=["pipeline", "content", "cf", "hybrid", "group"], default=S)
    r.add_argument("--mechanism", choices=["none", "uniform", "adaptive"], default=S)
    r.add_argument("--epsilon", type=float, default=S)
    r.add_argument("--sensitivity", type=float, default=S)
    r.add_argument("--omega-floor", type=float, default=S)
    r.add_argument("--budget", type=float, default=S, help="total epsilon the ledger allows")
    r.add_argument("-k", "--k", type=int, default=S)
    r.add_argument("-m", "--m", type=int, default=S, help="retrieval candidates")
    r.add_argument("--users", type=_strs, default=S, help="comma-separated subset of users")
    r.add_argument("--group", type=_strs, default=S, help="comma-separated group members")
    r.add_argument("--blend", type=float, default=S)
    r.add_argument("--neighbor-count", type=int, default=S)
    r.add_argument("--chain", type=_flag, default=S)
    r.add_argument("--chain-threshold", type=float, default=S)
    r.add_argument("--half-life", type=float, default=S)

    w = sub.add_parser("sweep", help="privacy-budget sweep (precision/recall vs epsilon)")
    common(w)
    weights(w)
    w.add_argument("--mechanisms", type=_strs, default=S, help="comma list of none,uniform,adaptive")
    w.add_argument("--epsilon-grid", type=_floats, default=S)
    w.add_argument("-k", "--k", type=int, default=S)
    w.add_argument("--trials", type=int, default=S)
    w.add_argument("-m", "--m", type=int, default=S)
    w.add_argument("--sensitivity", type=float, default=S)
    w.add_argument("--omega-floor", type=float, default=S)
    w.add_argument("--budget", type=float, default=S)
    w.add_argument("--holdout-fraction", type=float, default=S)
    w.add_argument("--jobs", type=int, default=S)

    lp = sub.add_parser("localpipe", help="client perturbation -> server clustering")
    common(lp)
    lp.add_argument("--epsilon", type=float, default=S)
    lp.add_argument("--grid-step", type=float, default=S)
    lp.add_argument("--clusters", type=int, default=S)
    lp.add_argument("--max-iters", type=int, default=S)
    return p


# --------------------------------------------------------------------------
# config resolution and I/O helpers

def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    if "config" in cli:
        path = cli.pop("config")
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if "config" in file_cfg and isinstance(file_cfg["config"], dict):
            file_cfg = file_cfg["config"]  # a manifest may be passed directly
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    cfg.update(cli)
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _load_data(cfg: dict) -> Catalog:
    has_path, has_synth = cfg.get("dataset") is not None, cfg.get("synth") is not None
    if has_path == has_synth:
        raise UsageError("give exactly one of --dataset or --synth")
    if has_path:
        return load_catalog(cfg["dataset"])
    spec = dict(cfg["synth"])
    spec.setdefault("seed", cfg["seed"])
    return synthesize(SynthSpec(**spec))


def _weights(cfg: dict, catalog: Catalog) -> FusionWeights:
    if cfg.get("weights"):
        with open(cfg["weights"], encoding="utf-8") as fh:
            w = FusionWeights.from_json(fh.read())
    else:
        w = FusionWeights.uniform()
    if cfg.get("train_weights"):
        w = train_weights(catalog, w)
    return w


def _out_dir(cfg: dict) -> Path:
    _require(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _manifest(out: Path, command: str, cfg: dict, outputs: list[str], extra: dict | None = None) -> None:
    doc = {
        "artifact": "privrec",
        "version": __version__,
        "command": command,
        "seed": cfg.get("seed"),
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "outputs": sorted(outputs),
        "nondeterministic_outputs": sorted(o for o in outputs if o == "timing.csv"),
    }
    if extra:
        doc.update(extra)
    _write(out / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands

def cmd_generate(cfg: dict) -> int:
    _require(cfg, "seed")
    out = _out_dir(cfg)
    keys = ("users", "videos", "dim", "topics", "noise", "interactions_per_user", "affinity", "bias", "concentration")
    spec = SynthSpec(seed=cfg["seed"], **{k: cfg[k] for k in keys if k in cfg})
    catalog = synthesize(spec)
    write_catalog(catalog, out / "catalog.jsonl")
    _manifest(out, "generate", cfg, ["catalog.jsonl"], {"synth_spec": spec.to_dict()})
    log.info("wrote %d videos, %d users, %d interactions", *catalog.counts)
    return EXIT_OK


def cmd_validate(cfg: dict) -> int:
    _require(cfg, "dataset")
    problems = validate(read_catalog(cfg["dataset"]))
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} violation(s)", file=sys.stderr)
        return EXIT_DATA
    print("ok")
    return EXIT_OK


def cmd_train_weights(cfg: dict) -> int:
    _require(cfg, "seed")
    catalog = _load_data(cfg)
    out = _out_dir(cfg)
    initial = FusionWeights.uniform()
    if cfg.get("initial"):
        with open(cfg["initial"], encoding="utf-8") as fh:
            initial = FusionWeights.from_json(fh.read())
    trained = train_weights(catalog, initial, TrainingConfig(int(cfg["steps"]), float(cfg["learning_rate"])))
    _write(out / "weights.json", trained.to_json() + "\n")
    losses = {"initial_loss": training_loss(catalog, initial, initial),
              "final_loss": training_loss(catalog, trained, initial)}
    _manifest(out, "train-weights", cfg, ["weights.json"], losses)
    return EXIT_OK


def _user_file(user_id: str) -> str:
    return quote(user_id, safe="") + ".csv"


def cmd_recommend(cfg: dict) -> int:
    """Run the selected strategy for each user and write one ranking CSV per user.

    ``pipeline`` is retrieve-then-rank with the chosen noise mechanism; each
    privatized list charges ``epsilon`` to the ledger.
    """
    _require(cfg, "seed")
    catalog = _load_data(cfg)
    out = _out_dir(cfg)
    rank_dir = out / "rankings"
    rank_dir.mkdir(exist_ok=True)
    weights = _weights(cfg, catalog)
    k, strategy = int(cfg["k"]), cfg["strategy"]
    half_life = math.inf if cfg.get("half_life") is None else float(cfg["half_life"])

    outputs: list[str] = []
    ledger = PrivacyLedger(cfg.get("budget"))
    if strategy == "group":
        _require(cfg, "group")
        ranked = group_recommend(cfg["group"], catalog, weights, k)
        _write(rank_dir / "group.csv", ranked.to_csv())
        outputs.append("rankings/group.csv")
    else:
        users = cfg.get("users") or list(catalog.users)
        for u in users:
            catalog.require_user(u)
        fused = fuse_matrix(weights, catalog)
        user_pos = {u: i for i, u in enumerate(catalog.users)}
        noise = None
        if strategy == "pipeline" and cfg["mechanism"] != "none":
            noise = NoiseConfig(float(cfg["sensitivity"]), float(cfg["epsilon"]), float(cfg["omega_floor"]))
        try:
            for u in users:
                if strategy == "pipeline":
                    vec = _mean_of_positives(catalog, u, fused, half_life)
                    cands = retrieve_candidates(vec, catalog, weights, int(cfg["m"]),
                                                exclude=catalog.positive_set(u), fused=fused)
                    priv = None
                    if noise is not None:
                        rng = make_rng(cfg["seed"], user_pos[u])
                        priv = make_privatizer(cfg["mechanism"], noise, rng, ledger)
                    ranked = rank_top_k(vec, cands, catalog, weights, k, privatizer=priv, fused=fused)
                elif strategy == "content":
                    ranked = content_recommend(u, catalog, weights, k)
                elif strategy == "cf":
                    ranked = cf_recommend(u, catalog, k, int(cfg["neighbor_count"]))
                else:
                    ranked = hybrid_recommend(u, catalog, weights, k, float(cfg["blend"]),
                                              int(cfg["neighbor_count"]), bool(cfg["chain"]),
                                              float(cfg["chain_threshold"]))
                name = _user_file(u)
                _write(rank_dir / name, ranked.to_csv())
                outputs.append(f"rankings/{name}")
        finally:
            if strategy == "pipeline":
                _write(out / "ledger.json", ledger.to_json() + "\n")
    if strategy == "pipeline":
        outputs.append("ledger.json")
    _manifest(out, "recommend", cfg, outputs, {"weights": json.loads(weights.to_json())})
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    _require(cfg, "seed")
    catalog = _load_data(cfg)
    out = _out_dir(cfg)
    weights = _weights(cfg, catalog)
    seed = int(cfg["seed"])
    prep = prepare(catalog, weights, int(cfg["m"]), float(cfg["holdout_fraction"]), seed)
    reports = []
    by_mech = {}
    for mech in cfg["mechanisms"]:
        rs = run_sweep(catalog, cfg["epsilon_grid"], int(cfg["k"]), int(cfg["trials"]), mech, seed,
                       sensitivity=float(cfg["sensitivity"]), omega_floor=float(cfg["omega_floor"]),
                       budget=cfg.get("budget"), jobs=int(cfg["jobs"]), prepared=prep)
        by_mech[mech] = rs
        reports.extend(rs)

    _write(out / "sweep.csv", reports_to_csv(reports))
    _write(out / "sweep_long.csv", reports_to_long(reports))
    _write(out / "timing.csv", timing_to_csv(reports))
    outputs = ["sweep.csv", "sweep_long.csv", "timing.csv"]
    extra: dict = {}
    if "uniform" in by_mech and "adaptive" in by_mech:
        _write(out / "comparison.csv", comparison_to_csv(compare_mechanisms(by_mech["uniform"], by_mech["adaptive"])))
        outputs.append("comparison.csv")
    if len(cfg["epsilon_grid"]) > 1 and int(cfg["trials"]) > 1:
        extra["trends"] = {
            mech: {m: vars(trend_test(rs, m)) for m in ("precision", "recall")}
            for mech, rs in by_mech.items() if mech != "none"
        }
    _manifest(out, "sweep", cfg, outputs, extra)
    return EXIT_OK


def cmd_localpipe(cfg: dict) -> int:
    _require(cfg, "seed")
    catalog = _load_data(cfg)
    out = _out_dir(cfg)
    seed = int(cfg["seed"])
    fused = fuse_matrix(FusionWeights.uniform(), catalog)
    eps, step = float(cfg["epsilon"]), float(cfg["grid_step"])
    # client side: each user perturbs with an independent stream
    uploads = [
        perturb_profile(_mean_of_positives(catalog, u, fused, math.inf), eps, step, make_rng(seed, 1, i))
        for i, u in enumerate(catalog.users)
    ]
    # upload order must not reveal which user sent what
    uploads.sort(key=lambda p: p.pseudonym)
    _write(out / "profiles.jsonl", "".join(p.to_json() + "\n" for p in uploads))
    # server side
    std = standardize(uploads, Template(catalog.dim, step))
    result = cluster_profiles(std, int(cfg["clusters"]), make_rng(seed, 2), int(cfg["max_iters"]))
    _write(out / "clusters.csv", result.to_csv())
    _manifest(out, "localpipe", cfg, ["profiles.jsonl", "clusters.csv"],
              {"objective_history": result.objective_history, "converged": result.converged})
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "validate": cmd_validate,
    "train-weights": cmd_train_weights,
    "recommend": cmd_recommend,
    "sweep": cmd_sweep,
    "localpipe": cmd_localpipe,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version, or a usage error already printed
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"privrec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExhaustedError as exc:
        print(f"privrec: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (DataError, FileNotFoundError) as exc:
        print(f"privrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"privrec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
