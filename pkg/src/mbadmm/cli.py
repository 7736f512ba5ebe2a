"""Command-line harness.

::

    mbadmm generate --instance SPEC [--out FILE] [--reference-out FILE]
    mbadmm certify  --instance SPEC [--gamma auto|G] [--grid K] [--out FILE]
    mbadmm solve    --instance SPEC [--variant V] [--gamma ...] [--check NAME ...] [--out FILE]
    mbadmm compare  [--instance SPEC] [--seeds 0-9] [--eps ...] [--out DIR]

``SPEC`` is either a path to an instance JSON file or a generator string
``name:key=value,...``:

* ``toyqp:n1=20,n2=50,n3=20,seed=0``
* ``toyqp-ineq:n2=50,n3=20,margin=1,seed=0``
* ``bp:p=60,n=200,s=12,sigma=0,seed=0``
* ``quadqp:p=6,sizes=6/4/5,curvature=0.5/1.5,seed=0``

Settings resolve as: command-line flag, then the matching key of the
``--config`` JSON object (keys are the long flag names with ``-`` written as
``_``), then the built-in default.

Exit status: 0 success or certified, 1 usage error, 2 not certifiable,
3 inequality check failed, 4 I/O error, 5 solver failure (the partial trace
is still written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io, problems, solvers, theory
from .core import IterateState, OracleError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CERTIFIABLE = 2
EXIT_CHECK_FAILED = 3
EXIT_IO = 4
EXIT_SOLVER = 5

DEFAULT_EPS = (1e-2, 1e-3, 1e-4, 1e-6)
CHECKS = ("lemma1", "lemma3", "theorem1", "theorem2", "theorem3", "rlinear")
_THEOREM_SCENARIO = {"theorem1": "scenario1", "theorem2": "scenario2", "theorem3": "scenario3"}

VARIANT_ALIASES = {
    "gs": "gauss_seidel",
    "gauss-seidel": "gauss_seidel",
    "j": "jacobian",
    "pj": "prox_jacobian",
    "prox-jacobian": "prox_jacobian",
    "slack": "slack_inequality",
    "slack-inequality": "slack_inequality",
}

DEFAULTS = {
    "instance": None,
    "config": None,
    "variant": "gauss_seidel",
    "gamma": None,
    "theta": 0.99,
    "alpha": 1.0,
    "tau": "auto",
    "iters": 200,
    "tol": 0.0,
    "eps": list(DEFAULT_EPS),
    "seed": None,
    "seeds": "0-9",
    "reference": None,
    "reference_out": None,
    "check": [],
    "out": None,
    "rank_tol": None,
    "grid": 0,
    "jobs": 1,
}


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with "not certifiable"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Instance specs


def _slash_floats(text):
    return tuple(float(v) for v in text.split("/"))


def _slash_ints(text):
    return tuple(int(v) for v in text.split("/"))


_GENERATORS = {
    "toyqp": {"n1": int, "n2": int, "n3": int, "seed": int},
    "toyqp-ineq": {"n1": int, "n2": int, "n3": int, "seed": int, "margin": float},
    "bp": {"p": int, "n": int, "s": int, "sigma": float, "seed": int},
    "quadqp": {"p": int, "sizes": _slash_ints, "curvature": _slash_floats, "seed": int},
}


def parse_spec(text: str):
    """Split ``name:k=v,...`` into the generator name and typed parameters."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    if name not in _GENERATORS:
        raise UsageError(f"unknown generator {name!r}; choose from {sorted(_GENERATORS)} or give a .json path")
    types = _GENERATORS[name]
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in types:
            raise UsageError(f"bad parameter {item!r} for {name}; allowed keys: {sorted(types)}")
        try:
            params[key] = types[key](value.strip())
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    return name, params


def generate(name: str, params: dict):
    """Build an instance from a parsed generator spec."""
    params = dict(params)
    try:
        if name == "toyqp":
            return problems.generate_toy_qp(problems.ToyQpSpec(**params))
        if name == "toyqp-ineq":
            margin = params.pop("margin", 1.0)
            return problems.generate_toy_qp_inequality(problems.ToyQpSpec(**params), margin)
        if name == "bp":
            if "sigma" in params:
                params["noise_sigma"] = params.pop("sigma")
            return problems.generate_basis_pursuit(problems.BasisPursuitSpec(**params))[0]
        if "curvature" in params and len(params["curvature"]) != 2:
            raise UsageError("curvature takes two values lo/hi")
        return problems.generate_quadratic_blocks(problems.QuadraticBlocksSpec(**params))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {name} parameters: {exc}") from exc


def _is_path(text: str) -> bool:
    return text.endswith(".json") or Path(text).exists()


def load_instance(text, seed=None):
    """Instance from a file path or a generator spec; ``seed`` overrides the spec's seed."""
    if text is None:
        raise UsageError("--instance is required")
    if _is_path(text):
        try:
            return io.load_instance(text)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise IOFailure(f"cannot read instance {text}: {exc}") from exc
    name, params = parse_spec(text)
    if seed is not None:
        params["seed"] = int(seed)
    return generate(name, params)


# ---------------------------------------------------------------------------
# Settings


def _load_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise IOFailure(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    settings = dict(DEFAULTS)
    settings.update(_load_config(getattr(args, "config", None)))
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None and value != []:
            settings[key] = value
    return settings


def parse_eps(value):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        eps = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad --eps value {value!r}") from exc
    if not eps or any(not e > 0 for e in eps):
        raise UsageError("--eps needs positive tolerances")
    return eps


def parse_seeds(value):
    if isinstance(value, int):
        return [value]
    if isinstance(value, list):
        return [int(v) for v in value]
    seeds = []
    try:
        for part in filter(None, (s.strip() for s in str(value).split(","))):
            lo, dash, hi = part.partition("-")
            seeds.extend(range(int(lo), int(hi) + 1) if dash else [int(lo)])
    except ValueError as exc:
        raise UsageError(f"bad --seeds value {value!r}") from exc
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    return seeds


def parse_variant(value):
    v = VARIANT_ALIASES.get(str(value).lower(), str(value).lower())
    if v not in solvers.VARIANTS:
        raise UsageError(f"unknown variant {value!r}")
    return v


def _as_float(value, flag):
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{flag} expects a number, got {value!r}") from exc


def _certification_instance(instance, variant):
    return problems.with_slack_block(instance) if variant == "slack_inequality" else instance


def resolve_gamma(value, instance, variant="gauss_seidel", theta=0.99, rank_tol=None):
    """Penalty from ``auto`` (theta * gamma_max), ``suggested`` or a number.

    With no value, ``auto`` is used when a certificate exists and the
    generator's suggested penalty otherwise.
    """
    if value is None or str(value).lower() in ("auto", "suggested"):
        mode = None if value is None else str(value).lower()
        suggested = problems.suggested_gamma(instance)
        if mode == "suggested" or (mode is None and suggested is not None):
            if suggested is None:
                raise UsageError("instance carries no suggested gamma")
            return float(suggested)
        report = theory.certify(_certification_instance(instance, variant), theta=theta, rank_tol=rank_tol)
        if not report.certified:
            raise theory.NotCertifiable(
                f"gamma=auto needs a certificate, but the instance matches {report.scenario}"
            )
        return float(report.gamma)
    g = _as_float(value, "--gamma")
    if not g > 0 or not math.isfinite(g):
        raise UsageError("--gamma must be positive")
    return g


def auto_tau(gamma: float, num_blocks: int, alpha: float) -> float:
    """Safe proximal scale ``1.01 * gamma * (N / (2 - alpha) - 1)``."""
    if not 0 < alpha < 2:
        raise UsageError("tau=auto needs 0 < alpha < 2")
    return 1.01 * gamma * (num_blocks / (2 - alpha) - 1)


def build_config(settings, instance, gamma, variant):
    alpha = _as_float(settings["alpha"], "--alpha")
    weights = None
    if variant == "prox_jacobian":
        tau = settings["tau"]
        tau = auto_tau(gamma, instance.num_blocks, alpha) if str(tau).lower() == "auto" else _as_float(tau, "--tau")
        weights = solvers.default_prox_weights(instance, tau)
    try:
        return solvers.SolverConfig(
            variant=variant,
            gamma=gamma,
            alpha=alpha,
            prox_weights=weights,
            max_iterations=int(settings["iters"]),
            stop_tolerance=_as_float(settings["tol"], "--tol"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def resolve_reference(value, instance):
    """``oracle``, ``none``, a file path, or ``None`` (oracle when one exists)."""
    if value is not None and str(value).lower() == "none":
        return None
    if value is None or str(value).lower() == "oracle":
        try:
            return problems.reference_for(instance)
        except ValueError as exc:
            if value is None:
                return None
            raise UsageError(f"no reference oracle: {exc}") from exc
    try:
        ref = io.load_reference(value)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IOFailure(f"cannot read reference {value}: {exc}") from exc
    if [x.size for x in ref.primal_star] != list(instance.sizes):
        raise UsageError("reference block sizes do not match the instance")
    return ref


# ---------------------------------------------------------------------------
# Output helpers


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {out}: {exc}") from exc


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


def _clean(obj):
    # JSON has no infinities; spell them out
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _instance_summary(instance):
    gen = instance.metadata.get("generator")
    return {"generator": gen, "p": instance.p, "blocks": instance.num_blocks, "sizes": list(instance.sizes)}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(settings) -> int:
    instance = load_instance(settings["instance"], settings["seed"])
    text = json.dumps(io.instance_to_dict(instance))
    _emit(text + "\n" if settings["out"] is None else text, settings["out"])
    if settings["reference_out"]:
        try:
            ref = problems.reference_for(instance)
        except ValueError as exc:
            raise UsageError(f"no reference oracle: {exc}") from exc
        try:
            io.save_reference(ref, settings["reference_out"])
        except OSError as exc:
            raise IOFailure(f"cannot write {settings['reference_out']}: {exc}") from exc
    return EXIT_OK


def gamma_grid(instance, points: int, rank_tol=None) -> list:
    """Headline delta at ``gamma = t * gamma_max`` for ``points`` interior ``t``."""
    base = theory.certify(instance, rank_tol=rank_tol)
    gmax = base.gamma_max
    if not base.matches or base.scenario == "none" or gmax is None or not math.isfinite(gmax):
        return []
    rows = []
    for t in np.linspace(0, 1, points + 2)[1:-1]:
        rep = theory.certify(instance, gamma=float(t * gmax), rank_tol=rank_tol)
        rows.append({"gamma": float(t * gmax), "scenario": rep.scenario, "delta": rep.delta})
    return rows


def cmd_certify(settings) -> int:
    instance = load_instance(settings["instance"], settings["seed"])
    rank_tol = None if settings["rank_tol"] is None else _as_float(settings["rank_tol"], "--rank-tol")
    gamma = settings["gamma"]
    theta = _as_float(settings["theta"], "--theta")
    if gamma is not None and str(gamma).lower() != "auto":
        gamma = _as_float(gamma, "--gamma")
    else:
        gamma = None
    try:
        report = theory.certify(instance, gamma=gamma, theta=theta, rank_tol=rank_tol)
    except theory.NotCertifiable as exc:
        report = theory.CertificateReport("none", ("none",))
        print(f"not certifiable: {exc}", file=sys.stderr)
    doc = {"instance": _instance_summary(instance), **report.to_dict()}
    if int(settings["grid"]) > 0:
        doc["grid"] = gamma_grid(instance, int(settings["grid"]), rank_tol)
    _emit(json.dumps(_clean(doc), indent=2, default=_json_default) + "\n", settings["out"])
    return EXIT_OK if report.certified else EXIT_NOT_CERTIFIABLE


def _check_view(instance, states, reference, variant):
    """Instance, iterates and reference the inequality checks operate on."""
    if variant == "slack_inequality":
        return (
            problems.with_slack_block(instance),
            [problems.with_slack_state(s) for s in states],
            problems.with_slack_reference(instance, reference),
        )
    return instance, states, reference


def run_check(name, instance, states, reference, gamma, rank_tol=None):
    """Evaluate one named check; returns ``(status, message)``."""
    pairs = list(zip(states, states[1:]))
    if name == "lemma1":
        res = [theory.check_lemma1(instance, a, b, reference, gamma) for a, b in pairs]
        ok = sum(r.holds for r in res)
        worst = min((r.slack for r in res), default=0.0)
        status = EXIT_OK if ok == len(res) else EXIT_CHECK_FAILED
        return status, f"{ok}/{len(res)} steps, min slack {worst:.3e}"
    if name in _THEOREM_SCENARIO:
        tag = _THEOREM_SCENARIO[name]
        report = theory.certify(instance, gamma=gamma, rank_tol=rank_tol)
        cert = report.certificates.get(tag)
        if cert is None or not cert.certified:
            return EXIT_NOT_CERTIFIABLE, f"{tag} not certified at gamma={gamma:.6g} (matches {list(report.matches)})"
        q = theory.check_qlinear(instance, states, reference, gamma, tag, cert.delta)
        env = theory.check_geometric_envelope(q.values, cert.delta)
        ok = q.all_passed and all(env)
        status = EXIT_OK if ok else EXIT_CHECK_FAILED
        return status, f"delta={cert.delta:.6g}, {sum(q.passed)}/{len(q.passed)} steps, envelope {sum(env)}/{len(env)}"
    if name == "lemma3":
        report = theory.certify(instance, gamma=gamma, rank_tol=rank_tol)
        if not {"scenario2", "scenario3"} & set(report.matches) or report.kappa is None:
            return EXIT_NOT_CERTIFIABLE, f"needs scenario2 or scenario3 (matches {list(report.matches)})"
        res = [theory.check_lemma3(instance, a, b, reference, gamma, report.kappa) for a, b in pairs]
        ok = sum(r.holds for r in res)
        status = EXIT_OK if ok == len(res) else EXIT_CHECK_FAILED
        return status, f"kappa={report.kappa:.6g}, {ok}/{len(res)} steps"
    if name == "rlinear":
        rep = theory.check_rlinear(states, reference, instance)
        blocks = [f.ratio for k, f in rep.fits.items() if k.startswith("A")]
        ratios = f"dual={rep.fits['dual'].ratio:.4f}, xN={rep.fits['xN'].ratio:.4f}, max block={max(blocks):.4f}"
        ok = rep.all_contracting and rep.xn_bound_holds
        status = EXIT_OK if ok else EXIT_CHECK_FAILED
        return status, f"{ratios}; x_N bound {sum(rep.xn_bound)}/{len(rep.xn_bound)}"
    raise UsageError(f"unknown check {name!r}; choose from {CHECKS}")


def lyapunov_series(instance, states, reference, gamma, weight) -> list:
    return [theory.lyapunov(instance, s, reference, gamma, weight).value for s in states]


def _initial_row(instance, state, reference):
    r = instance.coupled(state.primal) - instance.rhs
    if state.slack is not None:
        r = r + state.slack
    return {
        "primal_residual": float(np.linalg.norm(r)),
        "dual_change": None,
        "relative_error": None if reference is None else solvers.relative_error(state, reference),
    }


def cmd_solve(settings) -> int:
    instance = load_instance(settings["instance"], settings["seed"])
    variant = parse_variant(settings["variant"])
    checks = list(settings["check"] or [])
    for name in checks:
        if name not in CHECKS:
            raise UsageError(f"unknown check {name!r}; choose from {CHECKS}")
    if checks and variant not in ("gauss_seidel", "slack_inequality") and set(checks) - {"rlinear"}:
        raise UsageError("lemma and theorem checks apply to gauss_seidel and slack_inequality only")
    rank_tol = None if settings["rank_tol"] is None else _as_float(settings["rank_tol"], "--rank-tol")
    gamma = resolve_gamma(settings["gamma"], instance, variant, _as_float(settings["theta"], "--theta"), rank_tol)
    config = build_config(settings, instance, gamma, variant)
    eps_list = parse_eps(settings["eps"])
    reference = resolve_reference(settings["reference"], instance)
    if checks and (reference is None or reference.dual_star is None):
        raise UsageError("checks need a reference with a multiplier (--reference oracle or a file)")

    initial = IterateState.zeros(instance, slack=variant == "slack_inequality")
    history, records = [], []
    failure = None
    try:
        solvers.run(instance, initial, config, reference, history=history, trace=records)
    except (OracleError, np.linalg.LinAlgError) as exc:
        failure = exc

    view_inst, view_states, view_ref = (None, None, None)
    lyap = None
    if reference is not None and reference.dual_star is not None:
        view_inst, view_states, view_ref = _check_view(instance, history, reference, variant)
        full = any(c in ("theorem2", "theorem3") for c in checks)
        weight = theory.FULL_GAMMA if full else theory.HALF_GAMMA
        with np.errstate(over="ignore", invalid="ignore"):
            lyap = lyapunov_series(view_inst, view_states, view_ref, gamma, weight)
    rows = io.trace_rows(_initial_row(instance, initial, reference), records, lyap)
    out = settings["out"]
    summary = sys.stdout if out is not None else sys.stderr
    try:
        io.write_trace(sys.stdout if out is None else out, rows)
    except OSError as exc:
        raise IOFailure(f"cannot write {out}: {exc}") from exc

    print(f"variant={variant} gamma={gamma:.17g} iterations={len(records)}", file=summary)
    if failure is not None:
        print(f"solver failure at iteration {len(records) + 1}: {failure}", file=summary)
        return EXIT_SOLVER
    budget = config.max_iterations
    if reference is not None:
        e0 = rows[0]["relative_error"]
        errors = [r.relative_error for r in records]
        for eps in eps_list:
            print(f"eps={eps:g} iterations={solvers.iterations_to_tolerance(e0, errors, eps, budget)}", file=summary)
    else:
        print("no reference available; iterations-to-eps not reported", file=summary)

    status = EXIT_OK
    codes = []
    for name in checks:
        code, msg = run_check(name, view_inst, view_states, view_ref, gamma, rank_tol)
        codes.append(code)
        verdict = {EXIT_OK: "pass", EXIT_CHECK_FAILED: "FAIL", EXIT_NOT_CERTIFIABLE: "not certifiable"}[code]
        print(f"check {name}: {verdict} ({msg})", file=summary)
    if EXIT_NOT_CERTIFIABLE in codes:
        status = EXIT_NOT_CERTIFIABLE
    elif EXIT_CHECK_FAILED in codes:
        status = EXIT_CHECK_FAILED
    return status


COMPARED = ("gauss_seidel", "jacobian", "prox_jacobian")


def compare_seed(seed, settings) -> dict:
    """Run the three compared variants on one seed; errors per iteration and counts."""
    instance = load_instance(settings["instance"], seed)
    gamma = resolve_gamma(settings["gamma"], instance, "gauss_seidel", float(settings["theta"]))
    reference = problems.reference_for(instance)
    eps_list = parse_eps(settings["eps"])
    initial = IterateState.zeros(instance)
    e0 = solvers.relative_error(initial, reference)
    out = {"seed": seed, "gamma": gamma, "initial_error": e0, "errors": {}, "iterations": {}}
    for variant in COMPARED:
        config = build_config(settings, instance, gamma, variant)
        trace, _ = solvers.run(instance, initial, config, reference)
        errors = [r.relative_error for r in trace]
        out["errors"][variant] = errors
        out["iterations"][variant] = [
            solvers.iterations_to_tolerance(e0, errors, eps, config.max_iterations) for eps in eps_list
        ]
    return out


def geometric_mean_curves(results) -> dict:
    """Per-variant geometric mean across seeds of the relative error, ``k = 0..K``."""
    curves = {}
    for variant in COMPARED:
        rows = []
        for res in results:
            rows.append([res["initial_error"], *res["errors"][variant]])
        width = min(len(r) for r in rows)
        arr = np.array([r[:width] for r in rows], dtype=float)
        arr[~np.isfinite(arr)] = np.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            curves[variant] = np.exp(np.mean(np.log(arr), axis=0)).tolist()
    return curves


def cmd_compare(settings) -> int:
    if settings["instance"] is None:
        settings["instance"] = "bp:p=60,n=200,s=12,sigma=0"
    if _is_path(settings["instance"]):
        raise UsageError("compare needs a generator spec so that each seed draws a fresh instance")
    parse_spec(settings["instance"])
    seeds = parse_seeds(settings["seeds"])
    eps_list = parse_eps(settings["eps"])
    jobs = int(settings["jobs"])
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(compare_seed, seeds, [settings] * len(seeds)))
    else:
        results = [compare_seed(s, settings) for s in seeds]

    header = ["seed", "algorithm", *[f"eps={e:g}" for e in eps_list]]
    lines = [",".join(header)]
    for res in results:
        for variant in COMPARED:
            lines.append(",".join([str(res["seed"]), variant, *map(str, res["iterations"][variant])]))
    table = "\n".join(lines) + "\n"
    wins = []
    for other in COMPARED[1:]:
        for j, eps in enumerate(eps_list):
            n = sum(r["iterations"]["gauss_seidel"][j] <= r["iterations"][other][j] for r in results)
            wins.append(f"gauss_seidel <= {other} at eps={eps:g}: {n}/{len(results)} seeds")
    sys.stdout.write(table)
    for w in wins:
        print(w)

    if settings["out"] is not None:
        out = Path(settings["out"])
        curves = geometric_mean_curves(results)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "compare_table.csv").write_text(table)
            width = min(len(c) for c in curves.values())
            rows = ["k," + ",".join(COMPARED)]
            for k in range(width):
                rows.append(",".join([str(k), *(io.format_number(curves[v][k]) for v in COMPARED)]))
            (out / "compare_curves.csv").write_text("\n".join(rows) + "\n")
        except OSError as exc:
            raise IOFailure(f"cannot write to {out}: {exc}") from exc
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mbadmm",
        description="Multi-block ADMM solvers, convergence certificates and Lyapunov checks.",
        epilog="Precedence: command-line flags override --config keys, which override defaults. "
        "Exit codes: 0 ok, 1 usage, 2 not certifiable, 3 check failed, 4 I/O error, 5 solver failure.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--instance", help="instance JSON path or generator spec, e.g. toyqp:seed=0")
        p.add_argument("--config", help="JSON file with default settings")
        p.add_argument("--seed", type=int, help="override the generator seed")
        p.add_argument("--out", help="output path (stdout when omitted)")

    def gamma_opts(p):
        p.add_argument("--gamma", help="penalty: auto (theta * gamma_max), suggested, or a number")
        p.add_argument("--theta", type=float, help="fraction of gamma_max used by --gamma auto (0.99)")
        p.add_argument("--rank-tol", dest="rank_tol", type=float, help="relative singular value cutoff")

    p = sub.add_parser("generate", help="write an instance file")
    common(p)
    p.add_argument("--reference-out", dest="reference_out", help="also write the oracle reference solution")

    p = sub.add_parser("certify", help="scenario, kappa, gamma_max and rate certificates")
    common(p)
    gamma_opts(p)
    p.add_argument("--grid", type=int, help="also scan delta at this many gamma values below gamma_max")

    def solver_opts(p):
        gamma_opts(p)
        p.add_argument("--alpha", type=float, help="multiplier damping (prox_jacobian only)")
        p.add_argument("--tau", help="prox weight scale, P_i = tau ||A_i||^2 I, or auto")
        p.add_argument("--iters", type=int, help="iteration budget (200)")
        p.add_argument("--tol", type=float, help="stop once residual and dual change are below this")
        p.add_argument("--eps", help="comma-separated relative-error targets")

    p = sub.add_parser("solve", help="run one variant and write its trace")
    common(p)
    solver_opts(p)
    p.add_argument("--variant", help=f"one of {', '.join(solvers.VARIANTS)} (aliases gs, pj, slack)")
    p.add_argument("--reference", help="oracle, none, or a reference JSON path")
    p.add_argument("--check", action="append", choices=CHECKS, help="verify an inequality; repeatable")

    p = sub.add_parser("compare", help="Gauss-Seidel vs Jacobian vs prox-Jacobian across seeds")
    common(p)
    solver_opts(p)
    p.add_argument("--seeds", help="seed list such as 0-9 or 0,3,5")
    p.add_argument("--jobs", type=int, help="worker processes (seeds are reported in order)")
    return parser


COMMANDS = {"generate": cmd_generate, "certify": cmd_certify, "solve": cmd_solve, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"mbadmm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IOFailure as exc:
        print(f"mbadmm: {exc}", file=sys.stderr)
        return EXIT_IO
    except theory.NotCertifiable as exc:
        print(f"mbadmm: not certifiable: {exc}", file=sys.stderr)
        return EXIT_NOT_CERTIFIABLE


if __name__ == "__main__":
    sys.exit(main())
