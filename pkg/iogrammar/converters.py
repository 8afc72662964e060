"""
Exports and analyses of trace archives.

* `chrome_events`: Chrome trace events of an archive.
* `to_chrome_timeline`: Chrome trace-event JSON (complete events, microseconds).
* `records_frame`: One DataFrame row per call.
* `to_columnar`: One CSV row per call.
* `format_record`: One call as a text line.
* `dump_lines`: Human-readable text lines, one per call.
* `StatsReport`: Call counts, signature counts and sizes of an archive.
* `stats`: Builds a `StatsReport`.
* `render_stats`: Prints a `StatsReport` as `rich` tables.
"""
import logging

from collections import Counter
from dataclasses import dataclass, field, asdict

from pandas import DataFrame
from rich.console import Console
from rich.table import Table

from iogrammar.model import Int, Str, format_arg, decode_signature
from iogrammar.archive import ARCHIVE_FILES, GRAMMARS, CST, INDEX, TIMESTAMPS
from iogrammar.utils import to_json, to_dataframe

logger = logging.getLogger(__name__)

__all__ = [
	'COLUMNS',
	'chrome_events',
	'to_chrome_timeline',
	'records_frame',
	'to_columnar',
	'format_record',
	'dump_lines',
	'StatsReport',
	'stats',
	'render_stats'
]

COLUMNS = ['rank', 'tid', 'depth', 'func', 't_entry', 't_exit']
""" Leading columns of the columnar export, followed by arg1..argN."""

def _plain(arg):
	if isinstance(arg, (Int, Str)):
		return arg.value
	return format_arg(arg)

#------------------------------------------------------------------------------
# Chrome timeline
#------------------------------------------------------------------------------

def chrome_events(archive) -> list:
	"""
	Builds the trace events of an archive, ordered by rank then recording order.
	"""
	scale = archive.resolution * 1e6
	events = []
	for rank, record in archive.iter_records():
		info = archive.registry.info(record.func)
		args = {'arg%d' % (i + 1): _plain(arg) for i, arg in enumerate(record.args)}
		args['call_depth'] = record.call_depth
		events.append({
			'name': info.name,
			'cat': info.layer,
			'ph': 'X',
			'ts': round(record.t_entry * scale, 3),
			'dur': round((record.t_exit - record.t_entry) * scale, 3),
			'pid': rank,
			'tid': record.thread_id,
			'args': args
		})

	return events

def to_chrome_timeline(archive, output):
	"""
	Writes an archive as a Chrome trace-event JSON array of complete (`"ph": "X"`) events.

	Args:
	- **archive (TraceArchive)**: Source archive.
	- **output (str)**: Output JSON filename.

	Returns:
	- **int**: Number of events written.
	"""
	events = chrome_events(archive)
	to_json(events, output)
	logger.info("Wrote %d events to %s", len(events), output)

	return len(events)

#------------------------------------------------------------------------------
# Columnar text
#------------------------------------------------------------------------------

def records_frame(archive) -> DataFrame:
	rows = []
	width = 0
	for rank, record in archive.iter_records():
		row = [rank, record.thread_id, record.call_depth, archive.registry.name(record.func), record.t_entry, record.t_exit]
		row.extend(format_arg(arg) for arg in record.args)
		width = max(width, len(record.args))
		rows.append(row)

	columns = COLUMNS + ['arg%d' % (i + 1) for i in range(width)]
	rows = [row + [None] * (len(columns) - len(row)) for row in rows]

	return DataFrame(rows, columns=columns)

def to_columnar(archive, output):
	"""
	Writes one CSV row per call: rank, tid, depth, func, t_entry, t_exit, arg1..argN.
	Arguments are rendered as in `dump_lines`; calls with fewer arguments leave trailing cells empty.

	Args:
	- **archive (TraceArchive)**: Source archive.
	- **output (str)**: Output CSV filename.

	Returns:
	- **int**: Number of data rows written.
	"""
	df = records_frame(archive)
	to_dataframe(df, output)
	logger.info("Wrote %d rows to %s", len(df), output)

	return len(df)

#------------------------------------------------------------------------------
# Text dump
#------------------------------------------------------------------------------

def format_record(rank, record, registry) -> str:
	args = ', '.join(format_arg(arg) for arg in record.args)
	return '%d %d %d %d %d %s(%s)' % (
		rank, record.thread_id, record.call_depth, record.t_entry, record.t_exit, registry.name(record.func), args
	)

def dump_lines(archive):
	"""
	Yields one line per call: `rank tid depth t_entry t_exit func(args...)`.
	"""
	for rank, record in archive.iter_records():
		yield format_record(rank, record, archive.registry)

#------------------------------------------------------------------------------
# Statistics
#------------------------------------------------------------------------------

@dataclass
class StatsReport:
	"""
	Attributes:
		- `functions`(dict): Function name to `{'layer', 'calls', 'signatures'}`.
		- `unique_grammars`(int): Number of distinct grammars.
		- `cst_entries`(int): Entries of the merged signature table.
		- `file_sizes`(dict): Archive file name to byte size.
		- `total_records`(int): Calls over all ranks.
		- `rank_calls`(list): Calls per rank.
		- `layer_calls`(dict): Calls per layer.
		- `raw_bytes`(int): Size of the trace stored uncompressed (signature plus 8 timestamp bytes per call).
		- `compression_ratio`(float): `raw_bytes` over the archive size.
	"""
	functions: dict = field(default_factory=dict)
	unique_grammars: int = 0
	cst_entries: int = 0
	file_sizes: dict = field(default_factory=dict)
	total_records: int = 0
	rank_calls: list = field(default_factory=list)
	layer_calls: dict = field(default_factory=dict)
	raw_bytes: int = 0
	compression_ratio: float = 0.0

	@property
	def archive_bytes(self) -> int:
		return sum(self.file_sizes.values())

	@property
	def core_bytes(self) -> int:
		return self.file_sizes.get(GRAMMARS, 0) + self.file_sizes.get(CST, 0)

	def to_dict(self) -> dict:
		return asdict(self)

def stats(archive) -> StatsReport:
	"""
	Computes statistics of an archive without decompressing it: call counts come from the
	signature table.

	Args:
	- **archive (TraceArchive)**: Source archive.

	Returns:
	- **StatsReport**: The report.
	"""
	result = archive.result
	calls = Counter()
	signatures = Counter()
	layers = Counter()
	raw = 0
	for _, sig, count in result.table.items():
		func = decode_signature(sig.data)[0]
		calls[func] += count
		signatures[func] += 1
		layers[archive.registry.info(func).layer] += count
		raw += count * (len(sig) + 8)

	functions = {}
	for func in sorted(calls):
		info = archive.registry.info(func)
		functions[info.name] = {'layer': info.layer, 'calls': calls[func], 'signatures': signatures[func]}

	sizes = {name: archive.sizes[name] for name in ARCHIVE_FILES}
	total = sum(sizes.values())

	return StatsReport(
		functions         = functions,
		unique_grammars   = len(result.grammars),
		cst_entries       = len(result.table),
		file_sizes        = sizes,
		total_records     = sum(result.counts),
		rank_calls        = list(result.counts),
		layer_calls       = dict(sorted(layers.items())),
		raw_bytes         = raw,
		compression_ratio = raw / total if total else 0.0
	)

def render_stats(report, console=None):
	"""
	Prints a report as two `rich` tables: per-function counts, then archive totals.
	"""
	console = console or Console()

	table = Table(title='Calls per function', show_header=True, header_style='bold cyan')
	table.add_column('Function')
	table.add_column('Layer')
	table.add_column('Calls', justify='right')
	table.add_column('Signatures', justify='right')
	for name, row in report.functions.items():
		table.add_row(name, row['layer'], str(row['calls']), str(row['signatures']))
	console.print(table)

	summary = Table(title='Archive', show_header=True, header_style='bold cyan')
	summary.add_column('Item')
	summary.add_column('Value', justify='right')
	summary.add_row('ranks', str(len(report.rank_calls)))
	summary.add_row('records', str(report.total_records))
	summary.add_row('unique grammars', str(report.unique_grammars))
	summary.add_row('signatures', str(report.cst_entries))
	for name in (GRAMMARS, CST, INDEX, TIMESTAMPS):
		summary.add_row(name, '%d B' % report.file_sizes.get(name, 0))
	summary.add_row('raw size', '%d B' % report.raw_bytes)
	summary.add_row('compression ratio', '%.1f' % report.compression_ratio)
	console.print(summary)

#EOF
