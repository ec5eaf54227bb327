"""Operator-facing command line: key generation, manifest signing and
verification, descriptor scanning and vetting, experiment execution, report
rendering, and calibration reproduction.

Exit codes: 0 on success, 1 when a verdict-style subcommand lands on
Block/Reject, 2 on usage or configuration errors. stdout carries only the
machine-readable payload; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import defense, harness, manifest, report
from .errors import ConfigInvalid, InvalidRule, SentinelError
from .harness import CompositeWeights, ExperimentConfig, TrialSink, load_trials
from .policy import ScenarioKind

VETTER_URL_ENV = "SENTINEL_VETTER_URL"

_FIXTURES = Path(__file__).parent / "fixtures"

EXIT_OK = 0
EXIT_BLOCKED = 1
EXIT_USAGE = 2


def _err(message: str) -> None:
    print(f"sentinel: {message}", file=sys.stderr)


def _emit(payload: dict | list, output: Path | None = None) -> None:
    text = json.dumps(payload, indent=2)
    if output is not None:
        output.write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _load_descriptor(path: Path) -> manifest.ToolDescriptor:
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict) and "descriptor" in data:
        data = data["descriptor"]
    return manifest.descriptor_from_dict(data)


# --- subcommands ---------------------------------------------------------------

def cmd_keygen(args: argparse.Namespace) -> int:
    if args.bits < manifest.MIN_KEY_BITS:
        _err(f"--bits must be >= {manifest.MIN_KEY_BITS}")
        return EXIT_USAGE
    key_path, pub_path = Path(args.key), Path(args.pub)
    for path in (key_path, pub_path):
        if path.exists() and not args.force:
            _err(f"{path} exists; pass --force to overwrite")
            return EXIT_USAGE
    private, public = manifest.generate_keypair(args.bits)
    manifest.save_private_key_pem(private, key_path)
    manifest.save_public_key_pem(public, pub_path)
    _emit({"key": str(key_path), "pub": str(pub_path), "bits": args.bits})
    return EXIT_OK


def cmd_sign(args: argparse.Namespace) -> int:
    try:
        descriptor = _load_descriptor(Path(args.descriptor))
        private = manifest.load_private_key_pem(Path(args.key))
        signed = manifest.sign_manifest(descriptor, private)
    except (OSError, json.JSONDecodeError, ValueError, SentinelError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    payload = manifest.manifest_to_dict(signed)
    if args.output:
        Path(args.output).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        _emit({"manifest": args.output, "digest": signed.digest})
    else:
        _emit(payload)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        signed = manifest.load_manifest(Path(args.manifest))
        public = manifest.load_public_key_pem(Path(args.pub))
    except (OSError, json.JSONDecodeError, ValueError, SentinelError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    result = manifest.verify_manifest(signed, public)
    reason = result.reason.value if result.reason else None
    if result.accepted and args.registry:
        registry = manifest.DescriptorRegistry.load(Path(args.registry))
        status = registry.check_rug_pull(signed.descriptor)
        if status is manifest.RugPullStatus.RUG_PULL_DETECTED:
            _emit({"decision": "Reject", "reason": "RugPullDetected"})
            return EXIT_BLOCKED
    _emit({"decision": result.decision.value, "reason": reason})
    return EXIT_OK if result.accepted else EXIT_BLOCKED


def cmd_scan(args: argparse.Namespace) -> int:
    try:
        descriptor = _load_descriptor(Path(args.descriptor))
    except (OSError, json.JSONDecodeError, ValueError, SentinelError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    rules_path = Path(args.rules) if args.rules else _FIXTURES / "static_rules.json"
    try:
        rules = defense.StaticRuleSet.from_json_file(
            rules_path, entropy_low=args.entropy_low, entropy_high=args.entropy_high
        )
    except (OSError, InvalidRule) as exc:
        _err(str(exc))
        return EXIT_USAGE
    verdict = defense.static_filter(descriptor, rules)
    _emit(verdict.to_dict())
    return EXIT_BLOCKED if verdict.blocked else EXIT_OK


def cmd_vet(args: argparse.Namespace) -> int:
    try:
        descriptor = _load_descriptor(Path(args.descriptor))
    except (OSError, json.JSONDecodeError, ValueError, SentinelError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    endpoint = args.endpoint or os.environ.get(VETTER_URL_ENV)
    vetter: defense.Vetter
    if endpoint:
        vetter = defense.ExternalVetter(endpoint, timeout=args.timeout)
    else:
        vetter = defense.HeuristicVetter()
    verdict = defense.vet(
        descriptor,
        args.prompt,
        vetter,
        threshold=args.threshold,
        fail_open=args.fail_open,
    )
    _emit(verdict.to_dict())
    return EXIT_BLOCKED if verdict.blocked else EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    from . import adversary
    from .policy import DecisionPolicy

    try:
        policy_data = json.loads(Path(args.policy).read_text(encoding="utf-8"))
        policy = DecisionPolicy.from_dict(policy_data)
        pool = adversary.load_token_pool(Path(args.token_pool) if args.token_pool else None)
        testbed = adversary.build_testbed()
    except (OSError, json.JSONDecodeError, KeyError, ValueError, SentinelError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    target = args.target or next(
        t.benign.tool_id for t in testbed.tools
        if t.variants_for(adversary.AttackKind.TOOL_POISONING)
    )
    try:
        entry = testbed.tool(target)
        poisoned = entry.variants_for(adversary.AttackKind.TOOL_POISONING)[0]
    except (KeyError, IndexError):
        _err(f"no poisoning variant for target tool {target!r}")
        return EXIT_USAGE
    context = tuple(
        poisoned if d.tool_id == target else d for d in testbed.benign_descriptors()
    )
    try:
        result = adversary.optimize_prompt(
            base=args.base,
            policy=policy,
            context=context,
            budget=args.budget,
            rng_seed=args.seed,
            pool=pool,
            queries_per_estimate=args.queries,
        )
    except SentinelError as exc:
        _err(str(exc))
        return EXIT_USAGE
    _emit(
        {
            "target_tool_id": target,
            "best_text": result.candidate.text,
            "suffix_tokens": list(result.candidate.suffix_tokens),
            "estimated_objective": result.candidate.estimated_objective,
            "policy_queries": result.policy_queries,
            "candidates_evaluated": result.candidates_evaluated,
        },
        Path(args.output) if args.output else None,
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = ExperimentConfig.from_json_file(Path(args.config))
        if args.seed is not None:
            config = _reseed(config, args.seed)
    except ConfigInvalid as exc:
        _err(str(exc))
        return EXIT_USAGE
    if args.output:
        sink = TrialSink(
            Path(args.output),
            verdict_path=Path(args.verdict_log) if args.verdict_log else None,
        )
        records = harness.run_evaluation(config, sink=sink, jobs=args.jobs)
        sink.close()
        _err(f"wrote {len(records)} trial records to {args.output}")
    else:
        records = harness.run_evaluation(config, jobs=args.jobs)
        for record in records:
            print(json.dumps(record.to_json_dict()))
        print(json.dumps({
            "footer": True,
            "schema_version": harness.SCHEMA_VERSION,
            "record_count": len(records),
        }))
    return EXIT_OK


def _reseed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    import dataclasses

    return dataclasses.replace(config, master_seed=seed)


def cmd_report(args: argparse.Namespace) -> int:
    try:
        trials = load_trials(Path(args.trials))
    except ConfigInvalid as exc:
        _err(str(exc))
        return EXIT_USAGE
    group_by = tuple(f.strip() for f in args.group_by.split(",") if f.strip())
    weights = CompositeWeights()
    if args.weights:
        weights = CompositeWeights.from_dict(
            json.loads(Path(args.weights).read_text(encoding="utf-8"))
        )
    try:
        if args.format == "json":
            text = report.render_report_json(trials, group_by, weights)
        else:
            text = report.render_report_text(trials, group_by, weights)
    except SentinelError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
        _err(f"wrote report to {args.output}")
    else:
        print(text)
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    config_path = Path(args.config) if args.config else _FIXTURES / "calibration_gpt4.json"
    try:
        spec = json.loads(config_path.read_text(encoding="utf-8"))
        targets = {ScenarioKind(k): float(v) for k, v in spec["targets"].items()}
        n_trials = args.trials or int(spec.get("n_trials", 1000))
        seed = args.seed if args.seed is not None else int(spec.get("master_seed", 7))
        policy_id = spec.get("policy_id", "calibrated")
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        _err(f"bad calibration config {config_path}: {exc}")
        return EXIT_USAGE
    rows = harness.run_calibration(targets, n_trials, seed, policy_id=policy_id)
    contained = sum(1 for r in rows if r.contained)
    payload = {
        "policy_id": policy_id,
        "n_trials": n_trials,
        "master_seed": seed,
        "rows": [r.to_dict() for r in rows],
        "contained": contained,
        "total": len(rows),
    }
    _emit(payload, Path(args.output) if args.output else None)
    return EXIT_OK if contained >= max(1, len(rows) - 1) else EXIT_BLOCKED


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentinel",
        description="Signing gateway and adversarial evaluation harness for tool descriptors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate an RSA key pair")
    p.add_argument("--bits", type=int, default=manifest.MIN_KEY_BITS)
    p.add_argument("--key", required=True, help="private key output path (PEM)")
    p.add_argument("--pub", required=True, help="public key output path (PEM)")
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("sign", help="sign a descriptor into a manifest")
    p.add_argument("--descriptor", required=True)
    p.add_argument("--key", required=True, help="private key path (PEM)")
    p.add_argument("--output", help="manifest output path (stdout if omitted)")
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("verify", help="verify a signed manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pub", required=True, help="public key path (PEM)")
    p.add_argument("--registry", help="optional registry JSONL for rug-pull checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scan", help="static pattern/entropy screen of a descriptor")
    p.add_argument("--descriptor", required=True)
    p.add_argument("--rules", help="rules JSON (packaged defaults if omitted)")
    p.add_argument("--entropy-low", type=float, default=defense.DEFAULT_ENTROPY_BOUNDS[0])
    p.add_argument("--entropy-high", type=float, default=defense.DEFAULT_ENTROPY_BOUNDS[1])
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("vet", help="semantic safety scoring of a descriptor")
    p.add_argument("--descriptor", required=True)
    p.add_argument("--prompt", default="", help="prompt context for the vetting call")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--endpoint", help=f"vetting endpoint URL (or ${VETTER_URL_ENV})")
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--fail-open", action="store_true", help="pass when the vetter is unreachable")
    p.set_defaults(func=cmd_vet)

    p = sub.add_parser("optimize", help="black-box suffix search against a policy")
    p.add_argument("--base", required=True, help="base task prompt")
    p.add_argument("--policy", required=True, help="policy parameters JSON")
    p.add_argument("--target", help="tool whose poisoning variant joins the context")
    p.add_argument("--budget", type=int, default=50, help="candidate evaluations")
    p.add_argument("--queries", type=int, default=5, help="policy queries per estimate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--token-pool", help="newline-delimited token pool file")
    p.add_argument("--output", help="write the result here instead of stdout")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="trial JSONL output path (stdout if omitted)")
    p.add_argument("--verdict-log", help="also write per-layer verdicts, one per line")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render reports from a trial log")
    p.add_argument("--trials", required=True)
    p.add_argument("--group-by", default="scenario,model")
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--weights", help="JSON file with composite weight overrides")
    p.add_argument("--output", help="write report here instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="reproduce configured block-rate targets")
    p.add_argument("--config", help="calibration JSON (packaged defaults if omitted)")
    p.add_argument("--trials", type=int, help="override trials per scenario")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--output", help="write the calibration report here")
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SentinelError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
