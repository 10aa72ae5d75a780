"""
Command line entry point.

    hier-resolve [global flags] <command> [command flags]

Results go to standard output (or --out), logs to standard error.
Exit codes: 0 success, 1 domain error (or a failed verify / validate-dataset),
2 usage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from hier_resolve.__version__ import __version__
from hier_resolve.atomizer import atomize
from hier_resolve.config import AppConfig, build_detector, load_atomizer_rules, load_config, with_overrides
from hier_resolve.conflict_scan import MAX_PARALLELISM, ConflictMatrix, build_conflict_matrix
from hier_resolve.context_model import atoms_from_list, load_context
from hier_resolve.dataset_builder import load_held_out_pool, load_seed_cases, validate_dataset, write_corpus
from hier_resolve.errors import ContextFormatError, HierResolveError
from hier_resolve.hcal_loss import LossParams, hcal, scores_from_record
from hier_resolve.hier_solver import Resolution, brute_force_solve, solve, to_weighted_cnf
from hier_resolve.nli_client import benchmark_detector, load_labeled_pairs
from hier_resolve.pipeline import resolve_context
from hier_resolve.verifier import evaluate

log = logging.getLogger(__name__)

COMMANDS = (
    "atomize",
    "scan",
    "solve",
    "resolve",
    "verify",
    "loss",
    "build-dataset",
    "validate-dataset",
    "bench-detector",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _parallelism(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parallelism must be an integer, got {value!r}")
    if not 1 <= number <= MAX_PARALLELISM:
        raise argparse.ArgumentTypeError(f"parallelism must be within 1..{MAX_PARALLELISM}")
    return number


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration document")
    common.add_argument("--detector", choices=["rule", "external"], help="conflict detector backend")
    common.add_argument("--mock", help="replay detector responses from a JSON fixture")
    common.add_argument("--parallelism", type=_parallelism, help="concurrent detector queries")
    common.add_argument("--out", help="write the result here instead of standard output")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="hier-resolve", description="Resolve instruction conflicts by authority level.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="command")

    p = commands.add_parser("atomize", parents=[common], help="split a context into atomic instructions")
    p.add_argument("--in", dest="infile", default="-", help="context JSON (default: standard input)")
    p.add_argument("--skip-assistant", action="store_true", help="leave chat history out")

    p = commands.add_parser("scan", parents=[common], help="build the conflict matrix for atoms")
    p.add_argument("--in", dest="infile", default="-", help="atoms JSON, output of atomize (default: standard input)")

    p = commands.add_parser("solve", parents=[common], help="select the optimal conflict-free subset")
    p.add_argument("--in", dest="infile", default="-", help='JSON with "atoms" and "matrix" (default: standard input)')
    p.add_argument("--emit-wcnf", help="also write the weighted-CNF encoding to this path")
    p.add_argument("--base", type=int, help="weight base for the weighted-CNF export (default N+1)")
    p.add_argument("--brute-force", action="store_true", help="use exhaustive enumeration (N <= 20)")

    p = commands.add_parser("resolve", parents=[common], help="atomize, scan, solve and refine a context")
    p.add_argument("--in", dest="infile", default="-", help="context JSON (default: standard input)")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--skip-assistant", action="store_true", help="leave chat history out")

    p = commands.add_parser("verify", parents=[common], help="check a model output against a resolution")
    p.add_argument("--in", dest="infile", required=True, help="resolve JSON output")
    p.add_argument("--output", required=True, help="text file holding the model output")

    p = commands.add_parser("loss", parents=[common], help="evaluate the alignment loss over JSONL scores")
    p.add_argument("--in", dest="infile", required=True, help="JSONL score records")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.1)

    p = commands.add_parser("build-dataset", parents=[common], help="build preference records from seed cases")
    p.add_argument("--in", dest="infile", required=True, help="seed case JSONL")
    p.add_argument("--seed", type=int, required=True, help="level assignment seed")
    p.add_argument("--held-out-pool", help="artificial conflicting instructions, one per line")
    p.add_argument("--resume", action="store_true", help="skip cases listed in the manifest")

    p = commands.add_parser("validate-dataset", parents=[common], help="check a record JSONL file")
    p.add_argument("--in", dest="infile", required=True, help="record JSONL")

    p = commands.add_parser("bench-detector", parents=[common], help="precision/recall of the detector")
    p.add_argument("--in", dest="infile", required=True, help='JSONL of {"premise", "hypothesis", "conflict"}')
    return parser


def _reorder(argv: list[str]) -> Optional[list[str]]:
    """Move global flags given before the command to after it."""
    takes_value = {
        option for action in _common_flags()._actions if action.nargs != 0 for option in action.option_strings
    }
    skip = False
    for position, token in enumerate(argv):
        if skip:
            skip = False
        elif token in COMMANDS:
            return [token, *argv[:position], *argv[position + 1:]]
        else:
            skip = token in takes_value
    return None


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _read_json(path: str):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise ContextFormatError(f"{path} is not valid JSON: {e}")


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text, encoding="utf-8")
        log.info(f"Output written to {out}")
    else:
        sys.stdout.write(text)


def _dump(payload) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def _atoms_document(payload):
    items = payload["atoms"] if isinstance(payload, dict) else payload
    if not isinstance(items, list):
        raise ContextFormatError('Expected a list of atoms or an object with an "atoms" list')
    return atoms_from_list(items)


def _close(detector):
    close = getattr(detector, "close", None)
    if close:
        close()


def cmd_atomize(args, config: AppConfig) -> int:
    context = load_context(_read_text(args.infile))
    atoms = atomize(context, load_atomizer_rules(config), config.hierarchy, skip_assistant=args.skip_assistant)
    _emit(_dump({"atoms": [atom.to_dict() for atom in atoms]}), args.out)
    return 0


def cmd_scan(args, config: AppConfig) -> int:
    atoms = _atoms_document(_read_json(args.infile))
    detector = build_detector(config)
    try:
        matrix = build_conflict_matrix(detector, atoms, config.detector)
    finally:
        _close(detector)
    _emit(_dump(matrix.to_dict()), args.out)
    return 0


def cmd_solve(args, config: AppConfig) -> int:
    payload = _read_json(args.infile)
    atoms = _atoms_document(payload)
    matrix = ConflictMatrix.from_dict(payload.get("matrix", {}))
    solver = brute_force_solve if args.brute_force else solve
    resolution = solver(atoms, matrix, config.hierarchy)
    if args.emit_wcnf:
        Path(args.emit_wcnf).write_text(to_weighted_cnf(atoms, matrix, config.hierarchy, args.base), encoding="utf-8")
        log.info(f"Weighted CNF written to {args.emit_wcnf}")
    _emit(_dump(resolution.to_dict()), args.out)
    return 0


def cmd_resolve(args, config: AppConfig) -> int:
    context = load_context(_read_text(args.infile))
    detector = build_detector(config)
    try:
        report = resolve_context(context, detector, config, skip_assistant=args.skip_assistant)
    finally:
        _close(detector)
    if args.format == "text":
        _emit(report.refined.rendered, args.out)
    else:
        _emit(_dump(report.to_dict()), args.out)
    return 0


def cmd_verify(args, config: AppConfig) -> int:
    payload = _read_json(args.infile)
    atoms = _atoms_document(payload)
    resolution = Resolution.from_dict(payload["resolution"])
    output = Path(args.output).read_text(encoding="utf-8")
    report = evaluate(output, resolution, atoms)
    _emit(_dump(report.to_dict()), args.out)
    return 0 if report.all_pass else 1


def cmd_loss(args, config: AppConfig) -> int:
    params = LossParams(tau=args.tau, gamma=args.gamma, beta=args.beta)
    lines = []
    with open(args.infile, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ContextFormatError(f"{args.infile}:{number}: {e}")
            lines.append(json.dumps(hcal(scores_from_record(record), params).to_dict()))
    _emit("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_build_dataset(args, config: AppConfig) -> int:
    if not args.out:
        raise HierResolveError("build-dataset needs --out for the record file and its manifest")
    cases = load_seed_cases(args.infile)
    pool = load_held_out_pool(args.held_out_pool) if args.held_out_pool else []
    detector = build_detector(config)
    try:
        summary = write_corpus(
            cases, detector, args.seed, args.out, pool, config.detector.parallelism, resume=args.resume
        )
    finally:
        _close(detector)
    sys.stdout.write(_dump(summary.to_dict()))
    return 0


def cmd_validate_dataset(args, config: AppConfig) -> int:
    errors = validate_dataset(args.infile)
    for number, problem in errors:
        log.error(f"{args.infile}:{number}: {problem}")
    _emit(_dump({"errors": [{"line": number, "problem": problem} for number, problem in errors]}), args.out)
    return 1 if errors else 0


def cmd_bench_detector(args, config: AppConfig) -> int:
    pairs = load_labeled_pairs(args.infile)
    detector = build_detector(config)
    try:
        metrics = benchmark_detector(detector, pairs)
    finally:
        _close(detector)
    _emit(_dump(metrics), args.out)
    return 0


HANDLERS = {
    "atomize": cmd_atomize,
    "scan": cmd_scan,
    "solve": cmd_solve,
    "resolve": cmd_resolve,
    "verify": cmd_verify,
    "loss": cmd_loss,
    "build-dataset": cmd_build_dataset,
    "validate-dataset": cmd_validate_dataset,
    "bench-detector": cmd_bench_detector,
}


def run(argv: list[str]) -> int:
    parser = build_parser()
    ordered = _reorder(list(argv))
    if ordered is None:
        if "--version" in argv:
            return _parse_exit(parser, ["--version"])
        if "-h" in argv or "--help" in argv:
            parser.print_help(sys.stdout)
            return 0
        parser.print_help(sys.stderr)
        return 2

    try:
        args = parser.parse_args(ordered)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s | %(message)s",
        datefmt="%y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )

    try:
        config = with_overrides(load_config(args.config), args.detector, args.mock, args.parallelism)
        return HANDLERS[args.command](args, config)
    except (HierResolveError, ValueError, KeyError, OSError) as e:
        log.error(f"{args.command} failed: {e}")
        return 1


def _parse_exit(parser: argparse.ArgumentParser, argv: list[str]) -> int:
    try:
        parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0
    return 0


def main(args_list: Optional[list[str]] = None):
    load_dotenv()
    sys.exit(run(sys.argv[1:] if args_list is None else args_list))


if __name__ == "__main__":
    main()
