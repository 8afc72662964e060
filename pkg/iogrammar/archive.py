"""
On-disk trace archives.

An archive is a directory holding five files:

* `grammars.dat`: the unique grammars.
* `cst.dat`: the merged call signature table.
* `index.dat`: for each rank, which unique grammar it uses.
* `timestamps.dat`: per-rank packed timestamp blocks behind an offset header.
* `meta.txt`: sorted UTF-8 `key=value` lines.

Every binary file starts with the magic bytes `RCTG` and a u32 format version, and ends
with a u32 CRC-32 of everything before it. `meta.txt` carries a `crc32` key computed over
its other lines. All integers are little-endian.

**Constants**
* `MAGIC`, `FORMAT_VERSION`, `ARCHIVE_FILES`.

**Writing**
* `TraceMeta`: Metadata handed to the writer.
* `write_archive`: Writes a `MergeResult`.

**Reading**
* `TraceArchive`: Validated, read-only view of an archive.
* `read_records`: Decompresses one rank back into call records.
"""
import os
import json
import zlib
import struct
import logging

from dataclasses import dataclass, field
from typing import Optional

from iogrammar import __version__
from iogrammar.model import FunctionRegistry, CallRecord, decode_signature
from iogrammar.grammar import Grammar
from iogrammar.cst import SignatureTable
from iogrammar.finalize import CODEC, MergeResult, unpack_timestamps
from iogrammar.pattern import OffsetDecoder
from iogrammar.session import TIME_RESOLUTION, FilterConfig
from iogrammar.utils import ospathjoin, make_directory, read_bytes, write_bytes, file_size
from iogrammar.exceptions import CorruptArchive, MalformedGrammar, InvalidRecord, IOGrammarError

logger = logging.getLogger(__name__)

__all__ = [
	'MAGIC',
	'FORMAT_VERSION',
	'ARCHIVE_FILES',
	'TraceMeta',
	'write_archive',
	'TraceArchive',
	'read_records'
]

MAGIC = b'RCTG'
""" First four bytes of every binary archive file."""

FORMAT_VERSION = 1
""" Version written after the magic bytes. Readers reject any other value."""

GRAMMARS   = 'grammars.dat'
CST        = 'cst.dat'
INDEX      = 'index.dat'
TIMESTAMPS = 'timestamps.dat'
META       = 'meta.txt'

ARCHIVE_FILES = (GRAMMARS, CST, INDEX, TIMESTAMPS, META)
""" Files making up an archive."""

_HEADER = struct.Struct('<4sI')
_U32    = struct.Struct('<I')
_BLOCK  = struct.Struct('<QQQ')

#------------------------------------------------------------------------------
# Framing
#------------------------------------------------------------------------------

def _frame(body) -> bytes:
	data = _HEADER.pack(MAGIC, FORMAT_VERSION) + body
	return data + _U32.pack(zlib.crc32(data))

def _unframe(filename, data) -> bytes:
	"""
	Checks magic, version and trailer of a binary file and returns its body.
	"""
	if len(data) < _HEADER.size + _U32.size:
		raise CorruptArchive(filename, len(data), "file is too short")

	magic, version = _HEADER.unpack_from(data, 0)
	if magic != MAGIC:
		raise CorruptArchive(filename, 0, "bad magic %r" % magic)
	if version != FORMAT_VERSION:
		raise CorruptArchive(filename, 4, "unsupported format version %d" % version)

	end = len(data) - _U32.size
	(crc,) = _U32.unpack_from(data, end)
	if crc != zlib.crc32(data[:end]):
		raise CorruptArchive(filename, end, "checksum mismatch")

	return data[_HEADER.size:end]

def _meta_crc(lines) -> int:
	return zlib.crc32('\n'.join(lines).encode('utf-8'))

#------------------------------------------------------------------------------
# Writing
#------------------------------------------------------------------------------

@dataclass
class TraceMeta:
	"""
	Application-level metadata stored in `meta.txt`.

	Attributes:
		- `registry`(FunctionRegistry): Function names, arities and descriptors.
		- `resolution`(float): Seconds per timestamp tick.
		- `filter`(FilterConfig, optional): Runtime filter in effect, None when every call was recorded.
		- `intra_pattern`(bool): Whether offsets were encoded as `i*a + b`.
		- `inter_pattern`(bool): Whether coefficients were rewritten as `rank*c + d`.
		- `app`(str): Application name.
		- `workload`(dict, optional): Description of the workload that produced the trace.
	"""
	registry: FunctionRegistry
	resolution: float = TIME_RESOLUTION
	filter: Optional[FilterConfig] = None
	intra_pattern: bool = True
	inter_pattern: bool = True
	app: str = ''
	workload: Optional[dict] = None

	def to_lines(self, result) -> list:
		filter_ = self.filter.to_dict() if self.filter is not None else None
		values = {
			'app': self.app,
			'codec': CODEC,
			'filter': json.dumps(filter_, sort_keys=True, separators=(',', ':')),
			'format_version': str(FORMAT_VERSION),
			'functions': self.registry.to_json(),
			'inter_pattern': str(int(self.inter_pattern)),
			'intra_pattern': str(int(self.intra_pattern)),
			'layers': ','.join(sorted(filter_['layers'])) if filter_ else '',
			'nranks': str(result.nranks),
			'rank_calls': json.dumps(result.counts, separators=(',', ':')),
			'resolution': repr(float(self.resolution)),
			'tool_version': __version__,
			'workload': json.dumps(self.workload, sort_keys=True, separators=(',', ':'))
		}
		for key, value in values.items():
			if '\n' in value or '\r' in value:
				raise ValueError("Metadata value of %s spans several lines" % key)

		return ['%s=%s' % (key, values[key]) for key in sorted(values)]

def _grammars_body(grammars) -> bytes:
	out = bytearray(_U32.pack(len(grammars)))
	for grammar in grammars:
		data = grammar.to_bytes()
		out += _U32.pack(len(data))
		out += data
	return bytes(out)

def _index_body(index) -> bytes:
	return _U32.pack(len(index)) + struct.pack('<%dI' % len(index), *index)

def _timestamps_body(blocks, counts) -> bytes:
	header = bytearray(_U32.pack(len(blocks)))
	offset = 0
	for block, count in zip(blocks, counts):
		header += _BLOCK.pack(offset, len(block), count)
		offset += len(block)
	return bytes(header) + b''.join(blocks)

def write_archive(result, meta, path):
	"""
	Writes a finalized trace to a directory.

	Output is deterministic: identical inputs give byte-identical files.

	Args:
	- **result (MergeResult)**: Output of `finalize_trace`.
	- **meta (TraceMeta)**: Metadata.
	- **path (str)**: Target directory, created if missing.

	Raises:
	- **IoFailure**: If the directory or a file cannot be written.
	"""
	counts = result.counts if result.counts else [0] * result.nranks
	if len(counts) != result.nranks or len(result.timestamps) != result.nranks:
		raise ValueError("Expected one timestamp block and call count per rank")

	make_directory(path)

	files = {
		GRAMMARS: _frame(_grammars_body(result.grammars)),
		CST: _frame(result.table.to_bytes()),
		INDEX: _frame(_index_body(result.index)),
		TIMESTAMPS: _frame(_timestamps_body(result.timestamps, counts))
	}
	lines = meta.to_lines(result)
	lines.append('crc32=%d' % _meta_crc(lines))
	files[META] = ('\n'.join(sorted(lines)) + '\n').encode('utf-8')

	for filename, data in files.items():
		write_bytes(data, filename, path)
		logger.debug("Wrote %s (%d bytes)", ospathjoin(path, filename), len(data))

#------------------------------------------------------------------------------
# Reading
#------------------------------------------------------------------------------

class _Cursor:
	def __init__(self, filename, data, base):
		self.filename = filename
		self.data = data
		self.base = base
		self.pos  = 0

	def unpack(self, st):
		if self.pos + st.size > len(self.data):
			raise CorruptArchive(self.filename, self.base + self.pos, "truncated")
		values = st.unpack_from(self.data, self.pos)
		self.pos += st.size
		return values

	def take(self, n):
		if self.pos + n > len(self.data):
			raise CorruptArchive(self.filename, self.base + self.pos, "truncated")
		chunk = self.data[self.pos:self.pos + n]
		self.pos += n
		return chunk

	def done(self):
		if self.pos != len(self.data):
			raise CorruptArchive(self.filename, self.base + self.pos, "%d unexpected trailing bytes" % (len(self.data) - self.pos))

def _parse_meta(data) -> dict:
	try:
		text = data.decode('utf-8')
	except UnicodeDecodeError as e:
		raise CorruptArchive(META, e.start, "not valid UTF-8") from None

	if not text.endswith('\n'):
		raise CorruptArchive(META, len(data), "missing final newline")

	lines = text[:-1].split('\n')
	meta = {}
	offset = 0
	for line in lines:
		key, sep, value = line.partition('=')
		if not sep or not key or key in meta:
			raise CorruptArchive(META, offset, "malformed line %r" % line)
		meta[key] = value
		offset += len(line.encode('utf-8')) + 1

	if lines != sorted(lines):
		raise CorruptArchive(META, None, "keys are not sorted")
	if 'crc32' not in meta:
		raise CorruptArchive(META, None, "missing crc32 key")
	others = [line for line in lines if not line.startswith('crc32=')]
	if meta['crc32'] != str(_meta_crc(others)):
		raise CorruptArchive(META, None, "checksum mismatch")

	return meta

class TraceArchive:
	"""
	Read-only, fully validated view of an archive directory.

	Opening an archive checks every file (framing, checksums, structure) and the consistency
	between them, so decoding a rank afterwards cannot fail. Instances are safe to share
	between reader threads.

	Attributes:
		- `path`(str): Archive directory.
		- `meta`(dict): Raw `meta.txt` values.
		- `registry`(FunctionRegistry): Function registry stored in the metadata.
		- `result`(MergeResult): Merged table, unique grammars, index and timestamp blocks.
		- `resolution`(float): Seconds per tick.
		- `sizes`(dict): Byte size of each archive file.

	Methods:
		- `open`(path): Reads and validates an archive.
		- `read_records`(rank): Decompresses one rank.
		- `iter_records`(): Yields `(rank, record)` over all ranks.
	"""
	def __init__(self, path, meta, registry, result, sizes):
		self.path     = path
		self.meta     = meta
		self.registry = registry
		self.result   = result
		self.sizes    = sizes
		self.resolution = float(meta['resolution'])
		self._decoded = [decode_signature(sig.data) for sig in result.table]

	def __repr__(self):
		return 'TraceArchive(%r, nranks=%d, grammars=%d, signatures=%d)' % (
			self.path, self.nranks, len(self.result.grammars), len(self.result.table)
		)

	@property
	def nranks(self) -> int:
		return self.result.nranks

	@property
	def workload(self):
		return json.loads(self.meta.get('workload', 'null'))

	def record_count(self, rank=None) -> int:
		if rank is None:
			return sum(self.result.counts)
		return self.result.counts[rank]

	@classmethod
	def open(cls, path):
		"""
		Reads and validates an archive.

		Args:
		- **path (str)**: Archive directory.

		Returns:
		- **TraceArchive**: The archive.

		Raises:
		- **CorruptArchive**: If a file is missing, malformed, or inconsistent with the others.
		"""
		raw = {}
		for filename in ARCHIVE_FILES:
			if not os.path.isfile(ospathjoin(path, filename)):
				raise CorruptArchive(filename, None, "missing from %s" % path)
			raw[filename] = read_bytes(filename, path)

		meta = _parse_meta(raw[META])
		try:
			if int(meta['format_version']) != FORMAT_VERSION:
				raise CorruptArchive(META, None, "unsupported format version %s" % meta['format_version'])
			nranks   = int(meta['nranks'])
			registry = FunctionRegistry.from_json(meta['functions'])
			rank_calls = json.loads(meta['rank_calls'])
			float(meta['resolution'])
		except CorruptArchive:
			raise
		except (KeyError, ValueError, TypeError) as e:
			raise CorruptArchive(META, None, "invalid metadata: %s" % e) from None

		grammars = cls._read_grammars(_unframe(GRAMMARS, raw[GRAMMARS]))

		body = _unframe(CST, raw[CST])
		try:
			table, end = SignatureTable.from_bytes(body)
		except InvalidRecord as e:
			raise CorruptArchive(CST, _HEADER.size, str(e)) from None
		if end != len(body):
			raise CorruptArchive(CST, _HEADER.size + end, "unexpected trailing bytes")

		for index, sig in enumerate(table):
			try:
				func, args, _, _ = decode_signature(sig.data)
				registry.info(func)
				registry.check_arity(func, args)
			except IOGrammarError as e:
				raise CorruptArchive(CST, None, "entry %d: %s" % (index, e)) from None

		cursor = _Cursor(INDEX, _unframe(INDEX, raw[INDEX]), _HEADER.size)
		(count,) = cursor.unpack(_U32)
		index = list(cursor.unpack(struct.Struct('<%dI' % count))) if count else []
		cursor.done()

		blocks, counts = cls._read_timestamps(_unframe(TIMESTAMPS, raw[TIMESTAMPS]))

		if not (len(index) == len(blocks) == nranks == len(rank_calls)):
			raise CorruptArchive(INDEX, None, "rank counts disagree across files")
		if any(i >= len(grammars) for i in index):
			raise CorruptArchive(INDEX, None, "grammar index out of range")
		if counts != rank_calls:
			raise CorruptArchive(TIMESTAMPS, None, "call counts disagree with metadata")
		for g, grammar in enumerate(grammars):
			if any(t >= len(table) for t in grammar.terminals()):
				raise CorruptArchive(GRAMMARS, None, "grammar %d references a missing signature" % g)
		for rank, g in enumerate(index):
			if len(grammars[g]) != counts[rank]:
				raise CorruptArchive(GRAMMARS, None, "grammar %d does not expand to %d calls of rank %d" % (g, counts[rank], rank))

		result = MergeResult(table=table, grammars=grammars, index=index, timestamps=blocks, counts=counts)
		sizes = {filename: file_size(filename, path) for filename in ARCHIVE_FILES}

		return cls(path, meta, registry, result, sizes)

	@staticmethod
	def _read_grammars(body) -> list:
		cursor = _Cursor(GRAMMARS, body, _HEADER.size)
		(count,) = cursor.unpack(_U32)
		grammars = []
		for _ in range(count):
			(size,) = cursor.unpack(_U32)
			start = cursor.base + cursor.pos
			data = cursor.take(size)
			try:
				grammar, end = Grammar.from_bytes(data)
			except MalformedGrammar as e:
				raise CorruptArchive(GRAMMARS, start, str(e)) from None
			if end != size:
				raise CorruptArchive(GRAMMARS, start + end, "unexpected bytes after grammar")
			grammars.append(grammar)
		cursor.done()

		return grammars

	@staticmethod
	def _read_timestamps(body):
		cursor = _Cursor(TIMESTAMPS, body, _HEADER.size)
		(count,) = cursor.unpack(_U32)
		entries = [cursor.unpack(_BLOCK) for _ in range(count)]
		data_start = cursor.pos

		blocks = []
		counts = []
		expected = 0
		for rank, (offset, length, calls) in enumerate(entries):
			if offset != expected:
				raise CorruptArchive(TIMESTAMPS, _HEADER.size + 4 + rank * _BLOCK.size, "block %d is not contiguous" % rank)
			block = cursor.take(length)
			try:
				pairs = unpack_timestamps(block)
			except InvalidRecord as e:
				raise CorruptArchive(TIMESTAMPS, _HEADER.size + data_start + offset, str(e)) from None
			if len(pairs) != calls:
				raise CorruptArchive(TIMESTAMPS, _HEADER.size + data_start + offset, "block %d holds %d calls, header says %d" % (rank, len(pairs), calls))
			if any(t_exit < t_entry for t_entry, t_exit in pairs):
				raise CorruptArchive(TIMESTAMPS, _HEADER.size + data_start + offset, "exit before entry in rank %d" % rank)
			blocks.append(bytes(block))
			counts.append(calls)
			expected += length
		cursor.done()

		return blocks, counts

	def read_records(self, rank) -> list:
		"""
		Decompresses the calls of one rank.

		The rank's grammar is expanded, each terminal resolved through the signature table,
		offsets decoded from their patterns (using the per-key call index and the rank), and
		timestamps attached in order.

		Args:
		- **rank (int)**: Rank, below `nranks`.

		Returns:
		- **list of CallRecord**: The rank's calls in recording order.
		"""
		if not 0 <= rank < self.nranks:
			raise ValueError("Expected a rank below %d but got %d" % (self.nranks, rank))

		grammar = self.result.grammar_of(rank)
		stamps  = unpack_timestamps(self.result.timestamps[rank])
		decoder = OffsetDecoder(rank)

		records = []
		for terminal, (t_entry, t_exit) in zip(grammar.iter_expand(), stamps):
			func, args, tid, depth = self._decoded[terminal]
			args = decoder.decode(func, args, tid, depth)
			records.append(CallRecord(func, args, tid, depth, t_entry, t_exit))

		return records

	def iter_records(self):
		for rank in range(self.nranks):
			for record in self.read_records(rank):
				yield rank, record

def read_records(archive, rank) -> list:
	"""
	Decompresses one rank of an archive.

	Args:
	- **archive (TraceArchive or str)**: An open archive or its directory.
	- **rank (int)**: The rank.

	Returns:
	- **list of CallRecord**: The rank's calls.
	"""
	if not isinstance(archive, TraceArchive):
		archive = TraceArchive.open(archive)

	return archive.read_records(rank)

#EOF
