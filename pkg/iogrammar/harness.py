"""
Simulated parallel applications driving rank tracers.

A workload is a generator function run once per rank (and per thread). It issues calls
through a `RankContext` and yields a `CollectiveOpen` whenever all ranks must take part in
a collective open; the engine resumes every rank once the group-wide handle id is issued.
Ranks run one after another in rank order and the threads of a rank take turns in a seeded
order, so a given `WorkloadSpec` always produces the same trace.

**Workloads**
* `serial_nested`: `m` iterations of `n` writes and one fsync.
* `strided_shared`: every rank seeks to `rank*chunk + i*P*chunk` and writes `chunk` bytes.
* `ior_like`: collective MPI-IO open, `block/transfer` writes per rank, each backed by a nested pwrite.
* `checkpoint_series`: a new plot file every `iters_per_file` iterations.
* `collective_agg`: collective writes where aggregator ranks do the file I/O for their group.
* `random`: random calls drawn from a small catalogue.

**Engine**
* `WorkloadSpec`: Workload description.
* `OracleLog`: Uncompressed record streams kept next to the compressed trace.
* `TurnTaking`: Deterministic interleaving of the threads of one rank.
* `simulate`: Runs a workload and returns per-rank session results and the oracle.
* `run_workload`: Runs, finalizes and writes an archive.
* `compare_with_oracle`: Compares an archive against an oracle.
* `scaling_sweep`: Archive sizes over a range of one workload parameter.
"""
import logging
import tempfile
import threading

import numpy as np
import pandas

from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field, asdict, fields, replace
from typing import NamedTuple, Optional

from iogrammar.model import Handle, standard_registry
from iogrammar.pattern import HandleRegistry
from iogrammar.session import FilterConfig, RankTracer
from iogrammar.finalize import finalize_trace
from iogrammar.archive import TraceMeta, TraceArchive, write_archive, GRAMMARS, CST, INDEX, TIMESTAMPS
from iogrammar.utils import ospathjoin
from iogrammar.exceptions import InvalidWorkload

logger = logging.getLogger(__name__)

__all__ = [
	'KINDS',
	'WorkloadSpec',
	'OracleLog',
	'CollectiveOpen',
	'TurnTaking',
	'RankContext',
	'simulate',
	'run_workload',
	'compare_with_oracle',
	'scaling_sweep'
]

KINDS = ('serial_nested', 'strided_shared', 'ior_like', 'checkpoint_series', 'collective_agg', 'random')
""" Workload kinds."""

ALIASES = {
	'serial': 'serial_nested',
	'strided': 'strided_shared',
	'ior': 'ior_like',
	'checkpoint': 'checkpoint_series',
	'agg': 'collective_agg'
}
""" Short names accepted for workload kinds."""

COLLECTIVE_KINDS = ('ior_like', 'collective_agg')

SCHEDULE_STREAM = 7
""" Seed stream of the thread schedule, apart from the per-thread workload streams."""

# argument constants of the simulated calls
O_WRONLY_CREAT = 65
SEEK_SET       = 0
MPI_COMM_WORLD = 0
MPI_MODE_WRITE = 5
MPI_INFO_NULL  = 0
MPI_BYTE       = 1
BUFFER         = 0
FIRST_FD       = 3

#------------------------------------------------------------------------------
# Workload description
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkloadSpec:
	"""
	Description of a simulated run.

	Attributes:
		- `kind`(str): One of `KINDS`, or an alias from `ALIASES`.
		- `p`(int): Number of ranks.
		- `m`(int): Outer iterations.
		- `n`(int): Inner iterations (`serial_nested`).
		- `size`(int): Bytes per write (`serial_nested`, `checkpoint_series`).
		- `chunk`(int): Bytes per rank and iteration (`strided_shared`, `collective_agg`).
		- `block`(int): Bytes per rank (`ior_like`).
		- `transfer`(int): Bytes per write (`ior_like`), must divide `block`.
		- `files`(int): Number of plot files (`checkpoint_series`).
		- `iters_per_file`(int): Iterations written to each plot file (`checkpoint_series`).
		- `aggregators`(int): Aggregator ranks (`collective_agg`), at most `p`.
		- `seed`(int): Random seed (`random`).
		- `length`(int): Calls per rank and thread (`random`).
		- `alphabet`(int): Distinct call shapes drawn from (`random`).
		- `prefixes`(tuple of str): Path prefixes of the runtime filter, empty to record everything.
		- `layers`(tuple of str, optional): Enabled layers, None for all.
		- `intra_pattern`(bool): Encode offsets as `i*a + b`.
		- `inter_pattern`(bool): Rewrite coefficients as `rank*c + d` at finalization.
		- `threads`(int): Application threads per rank, 1 or 2.
	"""
	kind: str = 'strided_shared'
	p: int = 1
	m: int = 1
	n: int = 1
	size: int = 4096
	chunk: int = 10
	block: int = 1024
	transfer: int = 256
	files: int = 1
	iters_per_file: int = 1
	aggregators: int = 1
	seed: int = 0
	length: int = 100
	alphabet: int = 4
	prefixes: tuple = ()
	layers: Optional[tuple] = None
	intra_pattern: bool = True
	inter_pattern: bool = True
	threads: int = 1

	def __post_init__(self):
		object.__setattr__(self, 'kind', ALIASES.get(self.kind, self.kind))
		object.__setattr__(self, 'prefixes', tuple(self.prefixes))
		if self.layers is not None:
			object.__setattr__(self, 'layers', tuple(sorted(self.layers)))

	def validate(self):
		"""
		Raises:
		- **InvalidWorkload**: On an unknown kind, a count below 1, more aggregators than ranks,
			a transfer size not dividing the block size, or an unsupported thread count.
		"""
		if self.kind not in KINDS:
			raise InvalidWorkload("Expected a workload kind among %s but got %r" % (KINDS, self.kind))
		for name in ('p', 'm', 'n', 'size', 'chunk', 'block', 'transfer', 'files', 'iters_per_file', 'aggregators', 'length', 'alphabet'):
			if getattr(self, name) < 1:
				raise InvalidWorkload("Expected %s >= 1 but got %d" % (name, getattr(self, name)))
		if self.aggregators > self.p:
			raise InvalidWorkload("Expected at most %d aggregators but got %d" % (self.p, self.aggregators))
		if self.block % self.transfer != 0:
			raise InvalidWorkload("Transfer size %d does not divide block size %d" % (self.transfer, self.block))
		if self.threads not in (1, 2):
			raise InvalidWorkload("Expected 1 or 2 threads but got %d" % self.threads)
		if self.threads == 2 and self.kind in COLLECTIVE_KINDS:
			raise InvalidWorkload("%s does not support 2 threads" % self.kind)
		try:
			self.filter()
		except ValueError as e:
			raise InvalidWorkload(str(e)) from None

		return self

	def filter(self) -> Optional[FilterConfig]:
		if not self.prefixes and self.layers is None:
			return None
		if self.layers is None:
			return FilterConfig(prefixes=self.prefixes)
		return FilterConfig(prefixes=self.prefixes, layers=frozenset(self.layers))

	def to_dict(self) -> dict:
		d = asdict(self)
		d['prefixes'] = list(self.prefixes)
		d['layers'] = list(self.layers) if self.layers is not None else None
		return d

	@classmethod
	def from_dict(cls, d):
		known = {f.name for f in fields(cls)}
		unknown = set(d) - known
		if unknown:
			raise InvalidWorkload("Unknown workload fields %s" % sorted(unknown))
		values = dict(d)
		if values.get('prefixes') is not None:
			values['prefixes'] = tuple(values['prefixes'])
		if values.get('layers') is not None:
			values['layers'] = tuple(values['layers'])

		return cls(**values)

@dataclass
class OracleLog:
	"""
	Attributes:
		- `records`(list of list of CallRecord): Per rank, every recorded call, decoded.
		- `milestones`(list of list of tuple): Per rank, `(label, signature count)` marks set by the workload.
	"""
	records: list = field(default_factory=list)
	milestones: list = field(default_factory=list)

	@classmethod
	def empty(cls, nranks):
		return cls(records=[[] for _ in range(nranks)], milestones=[[] for _ in range(nranks)])

	@property
	def nranks(self) -> int:
		return len(self.records)

#------------------------------------------------------------------------------
# Engine
#------------------------------------------------------------------------------

class CollectiveOpen(NamedTuple):
	path: str
	handle: int

class TurnTaking:
	"""
	Lets the threads of one rank run one traced step at a time, in an order drawn from a
	seeded generator, so a threaded workload records the same interleaving on every run.

	Methods:
		- `turn`(thread_id): Context manager holding the turn for one step.
		- `leave`(thread_id): Removes a finished thread from the rotation.
	"""
	def __init__(self, nthreads, seed):
		self._cond     = threading.Condition()
		self._rng      = np.random.default_rng(seed)
		self._live     = list(range(nthreads))
		self._current  = self._draw()
		self.switches  = 0

	def _draw(self):
		if not self._live:
			return None
		return self._live[int(self._rng.integers(0, len(self._live)))]

	def _hand_over(self):
		previous = self._current
		self._current = self._draw()
		if self._current is not None and self._current != previous:
			self.switches += 1
		self._cond.notify_all()

	@contextmanager
	def turn(self, thread_id):
		with self._cond:
			self._cond.wait_for(lambda: self._current == thread_id)
		try:
			yield
		finally:
			with self._cond:
				self._hand_over()

	def leave(self, thread_id):
		with self._cond:
			self._cond.wait_for(lambda: self._current == thread_id)
			self._live.remove(thread_id)
			self._hand_over()

class RankContext:
	"""
	What a workload sees of its rank: call issuing, clock, and milestones.
	"""
	def __init__(self, tracer, spec, oracle, thread_id=0, schedule=None):
		self.tracer    = tracer
		self.spec      = spec
		self.rank      = tracer.rank
		self.thread_id = thread_id
		self._oracle   = oracle
		self._schedule = schedule
		self._ids      = {}

	@property
	def nranks(self) -> int:
		return self.spec.p

	def _id(self, name) -> int:
		func = self._ids.get(name)
		if func is None:
			func = self._ids[name] = self.tracer.registry.id_of(name)
		return func

	def _step(self):
		if self._schedule is None:
			return nullcontext()
		return self._schedule.turn(self.thread_id)

	def call(self, name, *args) -> bool:
		with self._step():
			return self.tracer.call(self.thread_id, self._id(name), args)

	def begin(self, name):
		with self._step():
			return self.tracer.begin_call(self.thread_id, self._id(name))

	def end(self, token, *args) -> bool:
		with self._step():
			return self.tracer.end_call(token, args)

	def mark(self, label):
		with self._step():
			self._oracle.milestones[self.rank].append((label, len(self.tracer.table)))

def _serial_nested(ctx):
	fd = Handle(FIRST_FD)
	for _ in range(ctx.spec.m):
		for _ in range(ctx.spec.n):
			ctx.call('write', fd, BUFFER, ctx.spec.size)
		ctx.call('fsync', fd)
	return
	yield

def _strided_shared(ctx):
	fd = Handle(FIRST_FD)
	chunk = ctx.spec.chunk
	base = ctx.rank * chunk
	stride = ctx.nranks * chunk
	for i in range(ctx.spec.m):
		ctx.call('lseek', fd, base + i * stride, SEEK_SET)
		ctx.call('write', fd, BUFFER, chunk)
	return
	yield

def _mpi_open(ctx, path, with_posix=True):
	""" Collective MPI_File_open, optionally backed by a POSIX open at depth 1. """
	fh = 1000 + 7 * ctx.rank
	token = ctx.begin('MPI_File_open')
	if with_posix:
		ctx.call('open', path, O_WRONLY_CREAT, Handle(FIRST_FD))
	yield CollectiveOpen(path, fh)
	ctx.end(token, MPI_COMM_WORLD, path, MPI_MODE_WRITE, MPI_INFO_NULL, Handle(fh))

	return Handle(fh)

def _mpi_close(ctx, fh, with_posix=True):
	token = ctx.begin('MPI_File_close')
	if with_posix:
		ctx.call('close', Handle(FIRST_FD))
	ctx.end(token, fh)

def _ior_like(ctx):
	spec = ctx.spec
	fh = yield from _mpi_open(ctx, '/scratch/ior.dat')
	fd = Handle(FIRST_FD)
	for k in range(spec.block // spec.transfer):
		offset = ctx.rank * spec.block + k * spec.transfer
		token = ctx.begin('MPI_File_write_at')
		ctx.call('pwrite', fd, BUFFER, spec.transfer, offset)
		ctx.end(token, fh, offset, BUFFER, spec.transfer, MPI_BYTE)
	_mpi_close(ctx, fh)

def _checkpoint_series(ctx):
	spec = ctx.spec
	fd = Handle(FIRST_FD)
	iteration = 0
	for f in range(spec.files):
		path = '/scratch/plot-%d' % f
		for _ in range(spec.iters_per_file):
			ctx.call('open', path, O_WRONLY_CREAT, fd)
			ctx.call('write', fd, BUFFER, spec.size)
			ctx.call('close', fd)
			ctx.mark(iteration)
			iteration += 1
	return
	yield

def _collective_agg(ctx):
	spec = ctx.spec
	group = -(-spec.p // spec.aggregators)
	leader = (ctx.rank // group) * group
	members = [r for r in range(leader, min(leader + group, spec.p))]
	is_aggregator = ctx.rank == leader

	fh = yield from _mpi_open(ctx, '/scratch/agg.dat', with_posix=is_aggregator)
	fd = Handle(FIRST_FD)
	for i in range(spec.m):
		offset = (i * spec.p + ctx.rank) * spec.chunk
		token = ctx.begin('MPI_File_write_at_all')
		if is_aggregator:
			for source in members[1:]:
				ctx.call('MPI_Recv', BUFFER, spec.chunk, MPI_BYTE, source, 0, MPI_COMM_WORLD)
			ctx.call('pwrite', fd, BUFFER, len(members) * spec.chunk, (i * spec.p + leader) * spec.chunk)
		else:
			ctx.call('MPI_Send', BUFFER, spec.chunk, MPI_BYTE, leader, 0, MPI_COMM_WORLD)
		ctx.end(token, fh, offset, BUFFER, spec.chunk, MPI_BYTE)
	_mpi_close(ctx, fh, with_posix=is_aggregator)

def _random(ctx):
	spec = ctx.spec
	rng = np.random.default_rng([spec.seed, ctx.rank, ctx.thread_id])
	fd = Handle(FIRST_FD)
	for _ in range(spec.length):
		k = int(rng.integers(0, spec.alphabet))
		shape = k % 5
		size = 64 * (k // 5 + 1)
		if shape == 0:
			ctx.call('write', fd, BUFFER, size)
		elif shape == 1:
			ctx.call('read', fd, BUFFER, size)
		elif shape == 2:
			ctx.call('lseek', fd, int(rng.integers(0, 4)) * size, SEEK_SET)
		elif shape == 3:
			ctx.call('fsync', fd)
		else:
			token = ctx.begin('H5Dwrite')
			ctx.call('pwrite', fd, BUFFER, size, int(rng.integers(0, 3)) * size)
			ctx.end(token, 1, 1, 0, 0, 0, BUFFER)
	return
	yield

WORKLOADS = {
	'serial_nested': _serial_nested,
	'strided_shared': _strided_shared,
	'ior_like': _ior_like,
	'checkpoint_series': _checkpoint_series,
	'collective_agg': _collective_agg,
	'random': _random
}

def _run_lockstep(contexts, workload, handles):
	"""
	Advances every rank to its next collective (or to its end) in rank order, then serves
	the collective before resuming them.
	"""
	running = {ctx.rank: workload(ctx) for ctx in contexts}
	replies = {rank: None for rank in running}

	while running:
		requests = {}
		finished = []
		for rank in sorted(running):
			try:
				requests[rank] = running[rank].send(replies[rank])
			except StopIteration:
				finished.append(rank)

		if requests and finished:
			raise RuntimeError("Ranks %s ended while ranks %s entered a collective" % (finished, sorted(requests)))
		for rank in finished:
			del running[rank]
		if not requests:
			break

		paths = {request.path for request in requests.values()}
		if len(paths) != 1:
			raise RuntimeError("Collective open on different paths %s" % sorted(paths))
		group = sorted(requests)
		uid = handles.collective_open(group, [requests[rank].handle for rank in group])
		replies = {rank: uid for rank in group}

def _run_threads(tracer, spec, oracle, workload):
	"""
	Runs the threads of one rank, taking turns at every traced step.
	"""
	schedule = TurnTaking(spec.threads, [spec.seed, tracer.rank, SCHEDULE_STREAM])
	errors = []

	def target(tid):
		try:
			for request in workload(RankContext(tracer, spec, oracle, tid, schedule)):
				raise RuntimeError("Unexpected collective %r in threaded mode" % (request,))
		except Exception as e:
			errors.append(e)
		finally:
			schedule.leave(tid)

	threads = [threading.Thread(target=target, args=(tid,)) for tid in range(spec.threads)]
	for t in threads:
		t.start()
	for t in threads:
		t.join()
	logger.debug("Rank %d: %d thread switches", tracer.rank, schedule.switches)
	if errors:
		raise errors[0]

def simulate(spec, registry=None):
	"""
	Runs a workload through one tracer per rank.

	Args:
	- **spec (WorkloadSpec)**: The workload.
	- **registry (FunctionRegistry, optional)**: Defaults to `standard_registry()`.

	Returns:
	- **tuple**: `(list of RankLocal, OracleLog, FunctionRegistry)`.
	"""
	spec.validate()
	registry = registry if registry is not None else standard_registry()
	handles  = HandleRegistry()
	oracle   = OracleLog.empty(spec.p)
	workload = WORKLOADS[spec.kind]
	filter_  = spec.filter()

	tracers = [
		RankTracer(
			rank, registry,
			handles       = handles,
			filter        = filter_,
			intra_pattern = spec.intra_pattern,
			oracle        = oracle.records[rank]
		)
		for rank in range(spec.p)
	]

	if spec.threads == 1:
		_run_lockstep([RankContext(t, spec, oracle) for t in tracers], workload, handles)
	else:
		for tracer in tracers:
			_run_threads(tracer, spec, oracle, workload)

	return [t.finalize_rank() for t in tracers], oracle, registry

def run_workload(spec, path=None):
	"""
	Runs a workload, finalizes the trace and writes the archive.

	Args:
	- **spec (WorkloadSpec)**: The workload.
	- **path (str, optional)**: Archive directory. A new temporary directory if omitted.

	Returns:
	- **tuple**: `(TraceArchive, OracleLog)`.

	Raises:
	- **InvalidWorkload**: If the workload is inconsistent.
	"""
	rank_locals, oracle, registry = simulate(spec)
	result = finalize_trace(rank_locals, inter_pattern=spec.inter_pattern)

	if path is None:
		path = tempfile.mkdtemp(prefix='iogrammar-')
	meta = TraceMeta(
		registry      = registry,
		filter        = spec.filter(),
		intra_pattern = spec.intra_pattern,
		inter_pattern = spec.inter_pattern,
		app           = spec.kind,
		workload      = spec.to_dict()
	)
	write_archive(result, meta, path)
	logger.info("%s: %d ranks, %d calls, archive written to %s", spec.kind, spec.p, sum(result.counts), path)

	return TraceArchive.open(path), oracle

def compare_with_oracle(archive, oracle, limit=10) -> list:
	"""
	Compares every decompressed rank with the oracle, field by field.

	Args:
	- **archive (TraceArchive)**: The archive.
	- **oracle (OracleLog)**: The uncompressed streams.
	- **limit (int, optional)**: Stop after that many differences. Defaults to 10.

	Returns:
	- **list of str**: Descriptions of the differences; empty when the archive is lossless.
	"""
	problems = []
	if archive.nranks != oracle.nranks:
		return ["archive has %d ranks, oracle has %d" % (archive.nranks, oracle.nranks)]

	for rank in range(archive.nranks):
		decoded  = archive.read_records(rank)
		expected = oracle.records[rank]
		if len(decoded) != len(expected):
			problems.append("rank %d: %d records, expected %d" % (rank, len(decoded), len(expected)))
		for pos, (got, want) in enumerate(zip(decoded, expected)):
			if got != want:
				problems.append("rank %d record %d: %r != %r" % (rank, pos, got, want))
				if len(problems) >= limit:
					return problems

	return problems

def scaling_sweep(spec, values, param='p', path=None) -> pandas.DataFrame:
	"""
	Runs one workload per value of a parameter and tabulates archive sizes.

	Args:
	- **spec (WorkloadSpec)**: Base workload.
	- **values (iterable of int)**: Values of `param`.
	- **param (str, optional)**: `WorkloadSpec` field to sweep. Defaults to 'p'.
	- **path (str, optional)**: Directory where the archives are kept, temporary if omitted.

	Returns:
	- **pandas.DataFrame**: One row per value with columns `scale_param`, `grammars_bytes`, `cst_bytes`,
		`index_bytes`, `timestamps_bytes`, `unique_grammars`, `cst_entries`, `core_bytes`.
	"""
	rows = []
	with tempfile.TemporaryDirectory(prefix='iogrammar-bench-') as tmp:
		base = path if path is not None else tmp
		for value in values:
			run = replace(spec, **{param: value})
			archive, _ = run_workload(run, ospathjoin(base, '%s-%d' % (param, value)))
			sizes = archive.sizes
			rows.append({
				'scale_param': value,
				'grammars_bytes': sizes[GRAMMARS],
				'cst_bytes': sizes[CST],
				'index_bytes': sizes[INDEX],
				'timestamps_bytes': sizes[TIMESTAMPS],
				'unique_grammars': len(archive.result.grammars),
				'cst_entries': len(archive.result.table),
				'core_bytes': sizes[GRAMMARS] + sizes[CST]
			})
			logger.debug("%s=%d: %s", param, value, rows[-1])

	return pandas.DataFrame(rows)

#EOF
