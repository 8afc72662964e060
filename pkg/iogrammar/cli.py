"""
Command line interface.

    iogrammar gen --kind strided --p 8 --m 100 -o trace/
    iogrammar verify trace/
    iogrammar dump trace/
    iogrammar convert trace/ --format chrome -o timeline.json
    iogrammar stats trace/ [--json]
    iogrammar bench --kind strided --p 2..64 [--no-inter-pattern]

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 corrupt archive.
"""
import sys
import json
import logging
import argparse

from rich.console import Console

from iogrammar import __version__
from iogrammar.model import KNOWN_LAYERS
from iogrammar.archive import TraceArchive
from iogrammar.converters import chrome_events, records_frame, to_chrome_timeline, to_columnar, dump_lines, format_record, stats, render_stats
from iogrammar.utils import is_json, is_csv_file, to_dataframe
from iogrammar.session import FilterConfig
from iogrammar.harness import KINDS, ALIASES, WorkloadSpec, simulate, run_workload, compare_with_oracle, scaling_sweep
from iogrammar.exceptions import IOGrammarError, CorruptArchive, InvalidWorkload

logger = logging.getLogger(__name__)

__all__ = [
	'EXIT_OK',
	'EXIT_FAILED',
	'EXIT_USAGE',
	'EXIT_CORRUPT',
	'parse_range',
	'build_parser',
	'main'
]

EXIT_OK      = 0
EXIT_FAILED  = 1
EXIT_USAGE   = 2
EXIT_CORRUPT = 3

def parse_range(text) -> list:
	"""
	Parses a sweep range.

	Args:
	- **text (str)**: `a..b` for powers-of-two steps from a to b (`2..64` is 2, 4, ..., 64),
		or a comma-separated list.

	Returns:
	- **list of int**: The values.
	"""
	try:
		if '..' in text:
			low, high = (int(v) for v in text.split('..', 1))
			if low < 1 or high < low:
				raise ValueError
			values = []
			v = low
			while v <= high:
				values.append(v)
				v *= 2
			return values
		return [int(v) for v in text.split(',')]
	except ValueError:
		raise argparse.ArgumentTypeError("Expected a range like 2..64 or 1,2,4 but got %r" % text) from None

#------------------------------------------------------------------------------
# Parser
#------------------------------------------------------------------------------

def _add_workload_arguments(parser, sweep=False):
	parser.add_argument('--kind', default='strided_shared', choices=sorted(KINDS + tuple(ALIASES)))
	number = parse_range if sweep else int
	parser.add_argument('--p', type=number, default=None, help='number of ranks')
	parser.add_argument('--m', type=number, default=None, help='outer iterations')
	parser.add_argument('--n', type=int, default=1, help='inner iterations (serial_nested)')
	parser.add_argument('--size', type=int, default=4096)
	parser.add_argument('--chunk', type=int, default=10)
	parser.add_argument('--block', type=int, default=1024)
	parser.add_argument('--transfer', type=int, default=256)
	parser.add_argument('--files', type=int, default=1)
	parser.add_argument('--iters-per-file', type=int, default=1)
	parser.add_argument('--aggregators', type=int, default=1)
	parser.add_argument('--seed', type=int, default=0)
	parser.add_argument('--length', type=int, default=100)
	parser.add_argument('--alphabet', type=int, default=4)
	parser.add_argument('--prefix', action='append', default=[], help='record only paths under this prefix (repeatable)')
	parser.add_argument('--layers', default=None, help='comma-separated enabled layers')
	parser.add_argument('--threads', type=int, default=1)
	parser.add_argument('--no-intra-pattern', action='store_true')
	parser.add_argument('--no-inter-pattern', action='store_true')

def build_parser() -> argparse.ArgumentParser:
	parser = argparse.ArgumentParser(prog='iogrammar', description='Grammar-based compression of parallel I/O call traces.')
	parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
	parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for info, -vv for debug logging')
	commands = parser.add_subparsers(dest='command', required=True)

	gen = commands.add_parser('gen', help='run a workload and write its archive')
	_add_workload_arguments(gen)
	gen.add_argument('-o', '--output', required=True, help='archive directory')

	verify = commands.add_parser('verify', help='rerun the recorded workload and compare')
	verify.add_argument('archive')

	dump = commands.add_parser('dump', help='print the decompressed records')
	dump.add_argument('archive')
	dump.add_argument('--rank', type=int, default=None)

	convert = commands.add_parser('convert', help='export to another trace format')
	convert.add_argument('archive')
	convert.add_argument('--format', required=True, choices=['chrome', 'csv'])
	convert.add_argument('-o', '--output', default=None, help='output file, stdout if omitted')

	stat = commands.add_parser('stats', help='call and size statistics')
	stat.add_argument('archive')
	stat.add_argument('--json', action='store_true', help='machine-readable output')

	bench = commands.add_parser('bench', help='archive sizes over a range of ranks or iterations')
	_add_workload_arguments(bench, sweep=True)
	bench.add_argument('-o', '--output', default=None, help='CSV file, stdout if omitted')

	return parser

def _filter(args) -> FilterConfig:
	"""
	Runtime filter of a workload: `--prefix` and `--layers` when given, the environment otherwise.
	"""
	try:
		return FilterConfig.from_env(
			prefixes = args.prefix or None,
			layers   = args.layers.split(',') if args.layers else None
		)
	except ValueError as e:
		raise InvalidWorkload(str(e)) from None

def _spec(args, **overrides) -> WorkloadSpec:
	filter_ = _filter(args)
	layers  = tuple(sorted(filter_.layers)) if filter_.layers != frozenset(KNOWN_LAYERS) else None
	values = dict(
		kind           = args.kind,
		p              = args.p if args.p is not None else 1,
		m              = args.m if args.m is not None else 1,
		n              = args.n,
		size           = args.size,
		chunk          = args.chunk,
		block          = args.block,
		transfer       = args.transfer,
		files          = args.files,
		iters_per_file = args.iters_per_file,
		aggregators    = args.aggregators,
		seed           = args.seed,
		length         = args.length,
		alphabet       = args.alphabet,
		prefixes       = filter_.prefixes,
		layers         = layers,
		intra_pattern  = not args.no_intra_pattern,
		inter_pattern  = not args.no_inter_pattern,
		threads        = args.threads
	)
	values.update(overrides)

	return WorkloadSpec(**values).validate()

#------------------------------------------------------------------------------
# Commands
#------------------------------------------------------------------------------

def cmd_gen(args, console):
	archive, _ = run_workload(_spec(args), args.output)
	console.print('%s: %d ranks, %d records, %d unique grammars' % (
		args.output, archive.nranks, archive.record_count(), len(archive.result.grammars)
	))
	return EXIT_OK

def cmd_verify(args, console):
	archive = TraceArchive.open(args.archive)
	workload = archive.workload
	if workload is None:
		console.print('%s: no workload recorded, nothing to compare against' % args.archive)
		return EXIT_FAILED

	spec = WorkloadSpec.from_dict(workload)
	_, oracle, _ = simulate(spec)
	problems = compare_with_oracle(archive, oracle)
	if problems:
		for problem in problems:
			console.print(problem, markup=False)
		logger.info("Verification of %s failed", args.archive)
		return EXIT_FAILED

	logger.info("Verification of %s passed", args.archive)
	console.print('%s: OK (%d records)' % (args.archive, archive.record_count()))
	return EXIT_OK

def cmd_dump(args, console):
	archive = TraceArchive.open(args.archive)
	if args.rank is None:
		lines = dump_lines(archive)
	else:
		lines = (format_record(args.rank, r, archive.registry) for r in archive.read_records(args.rank))
	for line in lines:
		sys.stdout.write(line + '\n')
	return EXIT_OK

def cmd_convert(args, console):
	archive = TraceArchive.open(args.archive)
	if args.output is not None:
		expected = is_json if args.format == 'chrome' else is_csv_file
		if not expected(args.output):
			logger.warning("Writing %s output to %s", args.format, args.output)

	if args.format == 'chrome':
		if args.output is None:
			sys.stdout.write(json.dumps(chrome_events(archive)) + '\n')
		else:
			to_chrome_timeline(archive, args.output)
	else:
		if args.output is None:
			to_dataframe(records_frame(archive), sys.stdout)
		else:
			to_columnar(archive, args.output)
	return EXIT_OK

def cmd_stats(args, console):
	report = stats(TraceArchive.open(args.archive))
	if args.json:
		sys.stdout.write(json.dumps(report.to_dict(), sort_keys=True) + '\n')
	else:
		render_stats(report, console)
	return EXIT_OK

def cmd_bench(args, console):
	ps = args.p or [1]
	ms = args.m or [1]
	if len(ps) > 1 and len(ms) > 1:
		raise InvalidWorkload("Sweep either --p or --m, not both")
	param, values = ('m', ms) if len(ms) > 1 else ('p', ps)

	df = scaling_sweep(_spec(args, p=ps[0], m=ms[0]), values, param)
	to_dataframe(df, args.output if args.output is not None else sys.stdout)
	return EXIT_OK

COMMANDS = {
	'gen': cmd_gen,
	'verify': cmd_verify,
	'dump': cmd_dump,
	'convert': cmd_convert,
	'stats': cmd_stats,
	'bench': cmd_bench
}

def main(argv=None) -> int:
	"""
	Runs the command line.

	Args:
	- **argv (list of str, optional)**: Arguments without the program name. Defaults to `sys.argv[1:]`.

	Returns:
	- **int**: The exit code.
	"""
	parser = build_parser()
	try:
		args = parser.parse_args(argv)
	except SystemExit as e:
		return e.code if isinstance(e.code, int) else EXIT_USAGE

	level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
	logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

	console = Console()
	try:
		return COMMANDS[args.command](args, console)
	except InvalidWorkload as e:
		console.print('usage error: %s' % e, markup=False)
		return EXIT_USAGE
	except CorruptArchive as e:
		console.print('corrupt archive: %s' % e, markup=False)
		return EXIT_CORRUPT
	except IOGrammarError as e:
		console.print('error: %s' % e, markup=False)
		return EXIT_FAILED

#EOF
