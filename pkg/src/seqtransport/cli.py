"""Command-line front end: simulate | transport | decompose | attribute | mc."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import dag as dagmod
from .conditional import KernelConfig
from .data import CATEGORICAL, NUMERIC, Dataset, format_float, ingest_csv, write_frame
from .effects import KERNEL, TREES, attribute_mediators, decompose, fit_outcome_model, overlap_check
from .errors import MissingColumn, SeqTransportError
from .sequential import NodeConfig, TransportConfig, joint_transport, sequential_transport
from .simgen import (
    METHODS,
    GaussianToyConfig,
    ThreeMediatorConfig,
    gaussian_toy_dag,
    gen_gaussian_toy,
    gen_three_mediator,
    run_monte_carlo,
    three_mediator_dag,
)

log = logging.getLogger("seqtransport")

SUMMARY_KEYS = ("delta_bar", "zeta_bar", "tau_bar", "eta_hat", "method", "seed", "n0", "n1")
DGPS = {"gaussian-toy": (GaussianToyConfig, gen_gaussian_toy, gaussian_toy_dag),
        "three-mediator": (ThreeMediatorConfig, gen_three_mediator, three_mediator_dag)}
EXIT_FAILURE = 1


@dataclass
class RunConfig:
    """Everything one transport / decomposition run needs."""

    data: Path
    dag: Path
    out: Path
    treatment: str | None = None
    outcome: str | None = None
    direction: str = "0->1"
    method: str = "st"
    gamma: float = 0.1
    simplex_gamma: float = 0.01
    bandwidths: dict[str, tuple[float, ...]] = field(default_factory=dict)
    node_gammas: dict[str, float] = field(default_factory=dict)
    regressor: str = KERNEL
    seed: int = 0
    id_column: str | None = None
    treated_value: str | None = None

    def validate(self) -> None:
        if self.method not in ("st", "ot", "skh"):
            raise ValueError(f"unknown method {self.method!r}; choose st, ot or skh")
        if self.direction not in ("0->1", "1->0"):
            raise ValueError(f"direction must be '0->1' or '1->0', got {self.direction!r}")
        if self.regressor not in (KERNEL, TREES):
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if not self.gamma > 0 or not self.simplex_gamma > 0:
            raise ValueError("gamma values must be positive")
        if self.method != "st" and (self.bandwidths or self.node_gammas):
            raise ValueError("per-node overrides only apply to --method st")
        for name, hs in self.bandwidths.items():
            if not hs or any(not h > 0 for h in hs):
                raise ValueError(f"bandwidths for {name!r} must be positive")
        for name, g in self.node_gammas.items():
            if not g > 0:
                raise ValueError(f"gamma for {name!r} must be positive")

    def transport_config(self) -> TransportConfig:
        names = set(self.bandwidths) | set(self.node_gammas)
        nodes = {n: NodeConfig(self.bandwidths.get(n), self.node_gammas.get(n)) for n in names}
        return TransportConfig(kernel=KernelConfig(), simplex_gamma=self.simplex_gamma, nodes=nodes)


# --- serialization ------------------------------------------------------------------


def _json_value(value, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) == 0:
            return "[]"
        items = [f"{pad}{_json_value(v, indent, level + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value) if math.isfinite(value) else "null"
    if value is None:
        return "null"
    return json.dumps(str(value))


def dumps_json(payload) -> str:
    """JSON text with every float written at 17 significant digits."""
    return _json_value(payload, 2, 0) + "\n"


class Artifacts:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, out: Path):
        self.out = out
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.paths.append(p)
        return p

    def remove(self) -> None:
        for p in self.paths:
            if p.exists():
                p.unlink()


# --- pipeline -------------------------------------------------------------------------


def load_inputs(cfg: RunConfig) -> tuple[Dataset, dagmod.DagSpec]:
    spec = dagmod.validate(dagmod.DagSpec.from_json(cfg.dag))
    treatment = cfg.treatment or spec.treatment
    outcome = cfg.outcome or spec.outcome
    if treatment is None:
        raise ValueError("no treatment column: declare one in the DAG or pass --treatment")
    kinds = {m: CATEGORICAL if spec.is_categorical(m) else NUMERIC for m in spec.mediators}
    data = ingest_csv(cfg.data, treatment, outcome, kinds=kinds, id_column=cfg.id_column,
                      required=list(spec.mediators), treated_value=cfg.treated_value)
    for name in list(cfg.bandwidths) + list(cfg.node_gammas):
        if name not in spec.mediators:
            raise MissingColumn(f"override names {name!r}, which is not a mediator")
    return data, spec


def counterfactuals(cfg: RunConfig, data: Dataset, spec: dagmod.DagSpec):
    if cfg.method == "st":
        return sequential_transport(data, spec, None, cfg.transport_config(), cfg.direction)
    return joint_transport(data, spec, cfg.method, gamma=cfg.gamma, direction=cfg.direction)


def counterfactual_frame(cf, data: Dataset) -> pd.DataFrame:
    """Factual mediators next to their transported values (suffix ``_cf``)."""
    frame = pd.DataFrame(index=pd.Index(cf.unit_ids, name="unit"))
    frame[data.treatment] = cf.source_group
    for m in cf.mediators:
        frame[m] = cf.original[m].to_numpy()
        frame[f"{m}_cf"] = cf.transported[m].to_numpy()
    return frame


def run_pipeline(cfg: RunConfig, stage: str) -> dict:
    """Run ``transport``, ``decompose`` or ``attribute`` and write its artifacts.

    Returns the summary dict (empty for ``transport``). On failure every file
    written so far is removed and the exception propagates.
    """
    cfg.validate()
    artifacts = Artifacts(cfg.out)
    try:
        data, spec = load_inputs(cfg)
        n0, n1 = data.group_sizes()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cf = counterfactuals(cfg, data, spec)
        diagnostics = {"method": cfg.method, "direction": cfg.direction, "order": list(cf.order),
                       "transport": cf.diagnostics,
                       "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught})}
        write_frame(counterfactual_frame(cf, data), artifacts.path("counterfactuals.csv"))
        summary: dict = {}
        if stage in ("decompose", "attribute"):
            if data.outcome is None:
                raise MissingColumn("decomposition needs an outcome column")
            features = list(spec.mediators)
            mu0 = fit_outcome_model(data, 0, cfg.regressor, features=features, seed=cfg.seed)
            mu1 = fit_outcome_model(data, 1, cfg.regressor, features=features, seed=cfg.seed)
            eff = decompose(mu0, mu1, cf)
            eff.overlap = overlap_check(cf, data.group(cf.target_group))
            source_overlap = overlap_check(cf, data.group(cf.source_group))
            if cfg.method == "st":
                eff.attribution = attribute_mediators(mu0, cf, mu1)
            write_frame(eff.to_frame(), artifacts.path("effects.csv"))
            if stage == "attribute":
                if eff.attribution is None:
                    raise ValueError("mediator attribution needs --method st")
                table = pd.DataFrame({"node": list(eff.attribution.order),
                                      "mean_increment": eff.attribution.increments.mean(axis=0)})
                table.to_csv(artifacts.path("attribution.csv"), index=False, float_format="%.17g",
                             lineterminator="\n")
            summary = {**eff.summary(), "method": cfg.method, "seed": cfg.seed, "n0": n0, "n1": n1}
            summary = {k: summary[k] for k in SUMMARY_KEYS}
            diagnostics["overlap"] = {
                "support": f"group {cf.target_group}",
                "threshold": eff.overlap.threshold,
                "flagged": list(eff.overlap.flagged),
                "eta_hat_source_support": source_overlap.eta_hat,
            }
            artifacts.path("summary.json").write_text(dumps_json(summary), encoding="utf-8")
        artifacts.path("diagnostics.json").write_text(dumps_json(diagnostics), encoding="utf-8")
        return summary
    except BaseException:
        artifacts.remove()
        raise


# --- argument parsing -----------------------------------------------------------------


def _overrides(items: list[str] | None, parse) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ValueError(f"expected NODE=VALUE, got {item!r}")
        out[name] = parse(value)
    return out


def _bandwidth_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _add_run_arguments(p: argparse.ArgumentParser, with_effects: bool) -> None:
    p.add_argument("--data", required=True, type=Path, help="input CSV with a header row")
    p.add_argument("--dag", required=True, type=Path, help="DAG JSON")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--treatment", help="treatment column (default: the DAG's treatment node)")
    p.add_argument("--outcome", help="outcome column (default: the DAG's outcome node)")
    p.add_argument("--id-column", help="column holding unit ids (default: 'unit' if present)")
    p.add_argument("--treated-value", help="treatment value coded as 1 when the column is not 0/1")
    p.add_argument("--direction", default="0->1", choices=["0->1", "1->0"])
    p.add_argument("--method", default="st", choices=["st", "ot", "skh"])
    p.add_argument("--gamma", type=float, default=0.1, help="entropic strength for --method skh")
    p.add_argument("--simplex-gamma", type=float, default=0.01, help="entropic strength on the simplex")
    p.add_argument("--bandwidth", action="append", metavar="NODE=H[,H...]",
                   help="kernel bandwidths over a node's parents (repeatable)")
    p.add_argument("--node-gamma", action="append", metavar="NODE=GAMMA",
                   help="simplex entropic strength for one categorical node (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker cap (transport runs single-threaded)")
    if with_effects:
        p.add_argument("--regressor", default=KERNEL, choices=[KERNEL, TREES])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqtransport", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    sim.add_argument("dgp", choices=sorted(DGPS))
    sim.add_argument("--n", type=int, help="sample size (gaussian-toy)")
    sim.add_argument("--n0", type=int, help="untreated count")
    sim.add_argument("--n1", type=int, help="treated count (three-mediator)")
    sim.add_argument("--p0", type=float, help="untreated probability (gaussian-toy)")
    sim.add_argument("--alpha", type=float, help="mean shift scale (gaussian-toy)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    sim.add_argument("--dag-out", type=Path, help="also write the generating DAG as JSON")

    for name, help_text, effects in (
        ("transport", "counterfactual mediator profiles", False),
        ("decompose", "direct, indirect and total effects", True),
        ("attribute", "effects plus per-mediator attribution", True),
    ):
        _add_run_arguments(sub.add_parser(name, help=help_text), effects)

    mc = sub.add_parser("mc", help="Monte Carlo replication table")
    mc.add_argument("--dgp", required=True, choices=sorted(DGPS))
    mc.add_argument("--methods", default="st1", help=f"comma list from {','.join(METHODS)}")
    mc.add_argument("--B", type=int, default=200, help="replications")
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--n", type=int)
    mc.add_argument("--n0", type=int)
    mc.add_argument("--n1", type=int)
    mc.add_argument("--p0", type=float)
    mc.add_argument("--alpha", type=float)
    mc.add_argument("--regressor", default=KERNEL, choices=[KERNEL, TREES])
    mc.add_argument("--gamma", type=float, default=0.1, help="entropic strength for skh")
    mc.add_argument("--threads", type=int, default=1, help="worker processes")
    mc.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    return parser


def _dgp_config(args):
    cls, _, _ = DGPS[args.dgp]
    options = {"seed": args.seed}
    allowed = {"gaussian-toy": ("n", "n0", "p0", "alpha"), "three-mediator": ("n0", "n1")}[args.dgp]
    for key in ("n", "n0", "n1", "p0", "alpha"):
        value = getattr(args, key, None)
        if value is None:
            continue
        if key not in allowed:
            raise ValueError(f"--{key} does not apply to {args.dgp}")
        options[key] = value
    return cls(**options)


def _write_table(frame: pd.DataFrame, target: str, index: bool) -> None:
    text = frame.to_csv(index=index, float_format="%.17g", lineterminator="\n")
    if target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = _dgp_config(args)
    _, generate, make_dag = DGPS[args.dgp]
    data = generate(cfg)
    _write_table(data.frame, args.out, index=True)
    if args.dag_out is not None:
        args.dag_out.write_text(json.dumps(make_dag().to_dict(), indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig(
        data=args.data, dag=args.dag, out=args.out, treatment=args.treatment, outcome=args.outcome,
        direction=args.direction, method=args.method, gamma=args.gamma, simplex_gamma=args.simplex_gamma,
        bandwidths=_overrides(args.bandwidth, _bandwidth_list), node_gammas=_overrides(args.node_gamma, float),
        regressor=getattr(args, "regressor", KERNEL), seed=args.seed, id_column=args.id_column,
        treated_value=args.treated_value,
    )
    summary = run_pipeline(cfg, args.command)
    if summary:
        sys.stdout.write(dumps_json(summary))
    return 0


def cmd_mc(args) -> int:
    cfg = _dgp_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    table = run_monte_carlo(cfg, methods, B=args.B, seed=args.seed, workers=max(1, args.threads),
                            regressor=args.regressor, skh_gamma=args.gamma)
    _write_table(table, args.out, index=False)
    return 0


COMMANDS = {"simulate": cmd_simulate, "transport": cmd_run, "decompose": cmd_run,
            "attribute": cmd_run, "mc": cmd_mc}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SeqTransportError, ValueError, KeyError, OSError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc).strip("'\""), "command": args.command}
        for attr in ("row", "column", "node", "unit", "cycle"):
            if getattr(exc, attr, None) is not None:
                report[attr] = getattr(exc, attr)
        sys.stderr.write(dumps_json(report))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
