"""Command-line front end.

    birkhoff [global flags] generate|analyze|classify|bowen|entropy [options]

Every run writes its outputs plus a manifest.json into --output-dir and, when a
results bucket is configured, publishes them to S3.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from birkhoff import __version__
from birkhoff.bowen import (
    DEFAULT_J,
    HYPERBOLIC,
    MAX_SAMPLES,
    VARIANTS,
    CycleParams,
    events_to_csv,
    flow_average_at_events,
    hyperbolic_times,
    nonhyperbolic_times,
    sample_flow,
    series_to_csv,
)
from birkhoff.classify import MIN_CLASSIFY_TERMS, ClassifierConfig, classify, classify_events
from birkhoff.entropy import (
    BRUTE_FORCE_LIMIT,
    ConstraintSchedule,
    brute_force_count,
    bernoulli_stream,
    growth_rate_report,
)
from birkhoff.errors import BirkhoffError, InsufficientDataError, InvalidInputError, SamplingError
from birkhoff.means import (
    DEFAULT_GRID_GAMMA,
    MAX_ORDER,
    LevelHistory,
    LimitSetEstimate,
    build_tower,
    history_to_csv,
    run_cascade,
    tower_summary,
)
from birkhoff.oscillation import detect_times, profile_to_jsonl
from birkhoff.sequences import (
    BUILTIN_SPECS,
    ObservableStream,
    builtin_spec,
    example3_stream,
    example3_values,
    generate,
    parse_spec_json,
    signed_run_symbols,
    spec_stream,
    spec_to_dict,
)
from birkhoff.storage import create_error_marker, generate_run_id, publish_run, resolve_bucket

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Options that never influence outputs
UNHASHED_OPTIONS = {'log_level', 's3_bucket', 'json_config', 'output_dir'}
# Options naming files whose content is part of the run identity
FILE_OPTIONS = ('input', 'spec', 'config', 'params', 'schedule')


def load_json_file(path: str) -> Dict[str, Any]:
    """Read a JSON object, reporting the position of syntax errors"""
    with open(path, 'r', encoding='utf-8') as handle:
        text = handle.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidInputError(
            f"Malformed JSON in {path} at line {e.lineno}, column {e.colno} (char {e.pos}): {e.msg}"
        ) from e
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path} must hold a JSON object")
    return doc


def resolve_input(name: str, seed: int) -> ObservableStream:
    """
    Turn an input name into a stream.

    Accepted: example1, example2, example3, bernoulli:p, a JSON sequence spec
    path, or a CSV path with a 'phi' or 'value' column.
    """
    if name in BUILTIN_SPECS:
        spec, obs_map = builtin_spec(name)
        return spec_stream(spec, obs_map, name=name)
    if name == 'example3':
        return example3_stream()
    if name.startswith('bernoulli:'):
        try:
            p = float(name.split(':', 1)[1])
        except ValueError:
            raise InvalidInputError(f"Malformed Bernoulli input '{name}', expected bernoulli:p") from None
        return bernoulli_stream(p, seed=seed)
    if name.endswith('.json'):
        with open(name, 'r', encoding='utf-8') as handle:
            spec, obs_map = parse_spec_json(handle.read())
        return spec_stream(spec, obs_map, name=os.path.basename(name))
    if name.endswith('.csv'):
        return read_csv_stream(name)
    raise InvalidInputError(f"Unknown input '{name}'")


def read_csv_stream(path: str) -> ObservableStream:
    with open(path, 'r', newline='', encoding='utf-8') as handle:
        reader = csv.DictReader(handle)
        fieldnames = reader.fieldnames or []
        column = 'phi' if 'phi' in fieldnames else ('value' if 'value' in fieldnames else None)
        if column is None:
            raise InvalidInputError(f"{path} needs a 'phi' or 'value' column, found {fieldnames}")
        try:
            values = np.array([float(row[column]) for row in reader], dtype=np.float64)
        except ValueError as e:
            raise InvalidInputError(f"Non-numeric value in {path}: {str(e)}") from e
    if values.size == 0:
        raise InsufficientDataError(f"{path} holds no values")
    if not np.isfinite(values).all():
        raise InvalidInputError(f"{path} contains non-finite values")
    return ObservableStream.from_array(values, bound=float(np.max(np.abs(values))), name=os.path.basename(path))


def write_output(output_dir: str, filename: str, content: str) -> str:
    with open(os.path.join(output_dir, filename), 'w', newline='', encoding='utf-8') as handle:
        handle.write(content)
    logger.info(f"Wrote {os.path.join(output_dir, filename)}")
    return filename


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2) + '\n'


def cmd_generate(args: argparse.Namespace) -> List[str]:
    """CSV of (index, symbol, phi) plus the canonical spec it came from"""
    if args.n < 1:
        raise InvalidInputError(f"n must be >= 1, got {args.n}")
    outputs = []
    if args.spec == 'example3':
        symbols = signed_run_symbols(args.n)
        phi = example3_values(args.n)
    else:
        if args.spec in BUILTIN_SPECS:
            spec, obs_map = builtin_spec(args.spec)
        else:
            with open(args.spec, 'r', encoding='utf-8') as handle:
                spec, obs_map = parse_spec_json(handle.read())
        symbols = generate(spec, args.n)
        phi = obs_map.map_array(symbols)
        outputs.append(write_output(args.output_dir, 'spec.json', dump_json(spec_to_dict(spec, obs_map))))

    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(['index', 'symbol', 'phi'])
    writer.writerows(zip(range(args.n), symbols.tolist(), (repr(float(v)) for v in phi.tolist())))
    outputs.insert(0, write_output(args.output_dir, args.output, output.getvalue()))
    return outputs


def cmd_analyze(args: argparse.Namespace) -> List[str]:
    """Hölder and Cesàro grid histories plus the tower summary"""
    if not 0 <= args.order <= MAX_ORDER:
        raise InvalidInputError(f"K must be in [0, {MAX_ORDER}], got {args.order}")
    stream = resolve_input(args.input, args.seed)
    run = run_cascade(stream, args.n_max, order=args.order, grid_gamma=args.grid_gamma)
    holder = build_tower(run, args.window, 'holder')
    cesaro = build_tower(run, args.window, 'cesaro')
    summary = tower_summary(run, holder)
    summary['cesaro'] = tower_summary(run, cesaro)['levels']
    summary['final'] = {'holder': run.holder_final.to_dict(), 'cesaro': run.cesaro_final.to_dict()}
    times_jsonl, summary['oscillation'] = level0_times_export(run.holder[0], holder.level(0), args.epsilon)
    return [
        write_output(args.output_dir, 'holder_history.csv', history_to_csv(run.holder)),
        write_output(args.output_dir, 'cesaro_history.csv', history_to_csv(run.cesaro)),
        write_output(args.output_dir, 'oscillation_times.jsonl', times_jsonl),
        write_output(args.output_dir, 'tower.json', dump_json(summary)),
    ]


def level0_times_export(
    level0: LevelHistory,
    hull: LimitSetEstimate,
    epsilon: Optional[float],
) -> Tuple[str, Dict[str, Any]]:
    """JSONL of the level-0 oscillation times and their summary; empty when none are detected"""
    epsilon = epsilon if epsilon is not None else 0.05 * hull.width
    try:
        profile = detect_times(level0, hull.lo, hull.hi, epsilon)
    except BirkhoffError as e:
        logger.warning(f"No oscillation times exported: {str(e)}")
        return '', {'epsilon': epsilon, 'count': 0, 'note': str(e)}
    return profile_to_jsonl(profile), {
        'epsilon': epsilon,
        'count': len(profile.times),
        'ratios': profile.stats().to_dict(),
    }


def load_classifier_config(args: argparse.Namespace) -> ClassifierConfig:
    doc = load_json_file(args.config) if args.config else {}
    doc.setdefault('grid_gamma', args.grid_gamma)
    return ClassifierConfig.from_dict(doc)


def cmd_classify(args: argparse.Namespace) -> List[str]:
    """Verdict JSON; every label, Inconclusive included, is a successful run"""
    config = load_classifier_config(args)
    stream = resolve_input(args.input, args.seed)
    verdict = classify(stream, args.n_max, config)
    return [write_output(args.output_dir, 'verdict.json', dump_json(verdict.to_dict()))]


def cmd_bowen(args: argparse.Namespace) -> List[str]:
    """Segment series, event averages and a verdict for one cycle variant"""
    params = CycleParams.from_dict(load_json_file(args.params)) if args.params else CycleParams()
    J = args.J if args.J is not None else DEFAULT_J[args.variant]
    series = hyperbolic_times(params, J) if args.variant == HYPERBOLIC else nonhyperbolic_times(params, J)
    events = flow_average_at_events(series)
    outputs = [
        write_output(args.output_dir, 'segments.csv', series_to_csv(series)),
        write_output(args.output_dir, 'events.csv', events_to_csv(events)),
    ]

    config = load_classifier_config(args)
    try:
        verdict = _classify_series(series, args.samples_per_segment, args.max_samples, config)
    except InsufficientDataError as e:
        logger.warning(f"Series too short to classify: {str(e)}")
        return outputs
    outputs.append(write_output(args.output_dir, 'verdict.json', dump_json(verdict.to_dict())))
    return outputs


def _classify_series(series, samples_per_segment: int, max_samples: int, config: ClassifierConfig):
    try:
        stream = sample_flow(series, samples_per_segment, max_samples)
    except SamplingError as e:
        logger.warning(f"Sampling refused ({str(e)}); classifying from event averages")
        return classify_events(series, config)
    if stream.length < MIN_CLASSIFY_TERMS:
        logger.warning(f"Sampled stream has {stream.length} terms; classifying from event averages")
        return classify_events(series, config)
    return classify(stream, stream.length, config)


def load_schedule(args: argparse.Namespace) -> ConstraintSchedule:
    if args.schedule:
        return ConstraintSchedule.from_dict(load_json_file(args.schedule))
    return ConstraintSchedule(
        N=args.N,
        alpha1=args.alpha1,
        alpha2=args.alpha2,
        epsilon=args.epsilon,
        alphabet_size=args.alphabet_size,
    )


def cmd_entropy(args: argparse.Namespace) -> List[str]:
    """Rates CSV and a summary comparing the final rate with log m and h(p)"""
    schedule = load_schedule(args)
    report = growth_rate_report(schedule, args.n_max)
    summary = report.summary()

    if args.verify_brute:
        if args.verify_brute > BRUTE_FORCE_LIMIT:
            raise InvalidInputError(f"--verify-brute is limited to n <= {BRUTE_FORCE_LIMIT}")
        mismatches = []
        for count in report.counts[:args.verify_brute]:
            oracle = brute_force_count(schedule, count.n)
            if oracle.count != count.count:
                mismatches.append({'n': count.n, 'dp': count.count, 'brute_force': oracle.count})
        summary['brute_force'] = {'n_max': min(args.verify_brute, args.n_max), 'mismatches': mismatches}
        if mismatches:
            write_output(args.output_dir, 'entropy_summary.json', dump_json(summary))
            raise BirkhoffError(f"DP and brute force disagree at n = {[m['n'] for m in mismatches]}")
        logger.info(f"Brute-force check passed for n <= {summary['brute_force']['n_max']}")

    return [
        write_output(args.output_dir, args.output, report.to_csv()),
        write_output(args.output_dir, 'entropy_summary.json', dump_json(summary)),
    ]


COMMANDS: Dict[str, Callable[[argparse.Namespace], List[str]]] = {
    'generate': cmd_generate,
    'analyze': cmd_analyze,
    'classify': cmd_classify,
    'bowen': cmd_bowen,
    'entropy': cmd_entropy,
}


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog='birkhoff',
        description='Compute, detect and classify non-convergent Birkhoff averages',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--output-dir', default='results', help='Directory for output files')
    parser.add_argument('--seed', type=int, default=0, help='Seed for random inputs')
    parser.add_argument('--grid-gamma', type=float, default=DEFAULT_GRID_GAMMA, help='Ratio of the recording grid')
    parser.add_argument('--json-config', help='JSON file supplying option defaults')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--s3-bucket', help='Publish outputs to this bucket (default: $RESULTS_BUCKET_NAME)')

    subparsers = parser.add_subparsers(dest='command', required=True)
    commands = {}

    p = subparsers.add_parser('generate', help='Write the first n symbols of a sequence')
    p.add_argument('--spec', default='example1', help='Built-in name or JSON sequence spec')
    p.add_argument('-n', '--n', type=int, required=True, help='Number of symbols')
    p.add_argument('--output', default='sequence.csv', help='Output file name')
    commands['generate'] = p

    p = subparsers.add_parser('analyze', help='Run the mean cascades and estimate the interval tower')
    p.add_argument('--input', default='example1')
    p.add_argument('--n-max', type=int, default=2 ** 24)
    p.add_argument('-K', '--order', type=int, default=3)
    p.add_argument('--window', type=float, default=0.5, help='Tail fraction for limit sets')
    p.add_argument('--epsilon', type=float, help='Oscillation band half-width (default 0.05 * level-0 width)')
    commands['analyze'] = p

    p = subparsers.add_parser('classify', help='Classify a stream as Convergent, B1, B2 or Inconclusive')
    p.add_argument('--input', default='example1')
    p.add_argument('--n-max', type=int, default=2 ** 24)
    p.add_argument('--config', help='Classifier config JSON')
    commands['classify'] = p

    p = subparsers.add_parser('bowen', help='Simulate a heteroclinic cycle and classify its averages')
    p.add_argument('--variant', choices=VARIANTS, default=HYPERBOLIC)
    p.add_argument('--params', help='Cycle parameters JSON')
    p.add_argument('-J', type=int, default=None, help='Number of residences')
    p.add_argument('--samples-per-segment', type=int, default=8)
    p.add_argument('--max-samples', type=int, default=MAX_SAMPLES)
    p.add_argument('--config', help='Classifier config JSON')
    commands['bowen'] = p

    p = subparsers.add_parser('entropy', help='Count admissible cylinders and report growth rates')
    p.add_argument('--schedule', help='Constraint schedule JSON')
    p.add_argument('--N', type=int, default=10)
    p.add_argument('--alpha1', type=float, default=0.4)
    p.add_argument('--alpha2', type=float, default=0.6)
    p.add_argument('--epsilon', type=float, default=0.05)
    p.add_argument('--alphabet-size', type=int, default=2)
    p.add_argument('--n-max', type=int, default=50)
    p.add_argument('--verify-brute', type=int, default=0, metavar='N', help='Cross-check n <= N by enumeration')
    p.add_argument('--output', default='rates.csv')
    commands['entropy'] = p

    return parser, commands


def _destinations(parser: argparse.ArgumentParser) -> set:
    return {action.dest for action in parser._actions}


def apply_json_defaults(
    parser: argparse.ArgumentParser,
    commands: Dict[str, argparse.ArgumentParser],
    doc: Dict[str, Any],
) -> None:
    """
    Use a JSON document as option defaults; explicit flags still win.

    Flat keys apply to every parser that has the option; a key naming a
    subcommand holds defaults for that subcommand only.
    """
    def normalize(section: Dict[str, Any]) -> Dict[str, Any]:
        return {key.replace('-', '_'): value for key, value in section.items()}

    for key, value in doc.items():
        if key in commands:
            if not isinstance(value, dict):
                raise InvalidInputError(f"json-config section '{key}' must be an object")
            section = normalize(value)
            unknown = set(section) - _destinations(commands[key])
            if unknown:
                raise InvalidInputError(f"Unknown options for '{key}' in json-config: {sorted(unknown)}")
            commands[key].set_defaults(**section)
            continue
        dest = key.replace('-', '_')
        targets = [p for p in [parser, *commands.values()] if dest in _destinations(p)]
        if not targets:
            raise InvalidInputError(f"Unknown option '{key}' in json-config")
        for target in targets:
            target.set_defaults(**{dest: value})


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--json-config')
    known, _ = pre.parse_known_args(argv)
    parser, commands = build_parser()
    if known.json_config:
        apply_json_defaults(parser, commands, load_json_file(known.json_config))
    return parser.parse_args(argv)


def resolved_config(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: value for key, value in sorted(vars(args).items()) if key not in UNHASHED_OPTIONS}


def hash_config(command: str, config: Dict[str, Any]) -> str:
    """sha256 over the canonical config and the content of every input file it names"""
    digest = hashlib.sha256()
    digest.update(json.dumps({'command': command, 'config': config}, sort_keys=True).encode('utf-8'))
    for option in FILE_OPTIONS:
        path = config.get(option)
        if isinstance(path, str) and os.path.isfile(path):
            with open(path, 'rb') as handle:
                digest.update(handle.read())
    return digest.hexdigest()


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    try:
        args = parse_args(argv)
    except BirkhoffError as e:
        configure_logging('INFO')
        logger.error(f"Invalid configuration: {str(e)}")
        return e.exit_code
    except OSError as e:
        configure_logging('INFO')
        logger.error(f"Cannot read configuration: {str(e)}")
        return 1

    configure_logging(args.log_level)
    config = resolved_config(args)
    config_hash = hash_config(args.command, config)
    run_id = generate_run_id(args.command, config_hash)
    bucket = resolve_bucket(args.s3_bucket)
    started = time.perf_counter()

    try:
        os.makedirs(args.output_dir, exist_ok=True)
        outputs = COMMANDS[args.command](args)
        manifest = {
            'command': args.command,
            'config': config,
            'input_hash': config_hash,
            'outputs': outputs,
            'duration_seconds': round(time.perf_counter() - started, 3),
            'version': __version__,
        }
        outputs.append(write_output(args.output_dir, 'manifest.json', dump_json(manifest)))
        logger.info(f"{args.command} finished in {manifest['duration_seconds']}s ({run_id})")

        if bucket:
            publish_run(bucket, run_id, args.output_dir, outputs, manifest)
        return 0

    except BirkhoffError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        if bucket:
            create_error_marker(bucket, run_id, e, args.command, e.exit_code, config_hash)
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        if bucket:
            create_error_marker(bucket, run_id, e, args.command, 1, config_hash)
        return 1
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {str(e)}")
        return 1
