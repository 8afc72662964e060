"""
Call records, argument values, canonical call signatures and the function registry.

Every other module of the package speaks in terms of the types defined here.

**Constants**
* `MAX_CALL_DEPTH`: Deepest call nesting a record may carry (255, one byte).
* `KNOWN_LAYERS`: Layer tags a function may belong to.

**Offset patterns**
* `RankLinear`: A coefficient written as `rank*c + d`.
* `Literal`: An offset stored as-is.
* `IterLinear`: An offset written as `i*a + b` for the i-th call of a pattern.

**Argument values**
* `Int`, `Str`, `Handle`, `UniqueHandle`, `Offset`: The tagged union of argument values.
* `Masked`: Placeholder used only inside pattern keys.
* `as_arg`: Coerces plain Python values into argument values.
* `format_arg`: Renders an argument value as text.

**Function registry**
* `FunctionInfo`: Descriptor of one registered function.
* `FunctionRegistry`: Dense, thread-safe name/id registry.
* `standard_registry`: A registry pre-loaded with common POSIX, MPI-IO, MPI and HDF5 functions.

**Records and signatures**
* `CallRecord`: One intercepted call.
* `CallSignature`: Canonical bytes of a record, timestamps excluded.
* `make_signature`: Builds the signature of a record.
* `encode_fields`: Builds canonical bytes from raw record fields.
* `decode_signature`: Inverse of `encode_fields`.
"""
import json
import struct
import threading

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

from iogrammar.exceptions import ConflictingRegistration, UnknownFunction, InvalidRecord

__all__ = [
	'MAX_CALL_DEPTH',
	'KNOWN_LAYERS',
	'I64_MIN',
	'I64_MAX',
	'RankLinear',
	'Literal',
	'IterLinear',
	'Int',
	'Str',
	'Handle',
	'UniqueHandle',
	'Offset',
	'Masked',
	'as_arg',
	'format_arg',
	'FunctionInfo',
	'FunctionRegistry',
	'standard_registry',
	'CallRecord',
	'CallSignature',
	'make_signature',
	'encode_fields',
	'decode_signature'
]

MAX_CALL_DEPTH = 255
""" Deepest call nesting a record may carry (one byte in the signature)."""

KNOWN_LAYERS = ('posix', 'mpiio', 'mpi', 'hdf5')
""" Layer tags a function may belong to."""

U32_MAX = 2**32 - 1

I64_MIN = -2**63
I64_MAX = 2**63 - 1
""" Range of offsets and pattern coefficients (signed 64-bit)."""

#==============================================================================
#
#   O f f s e t   p a t t e r n s
#
#==============================================================================

@dataclass(frozen=True)
class RankLinear:
	"""
	A coefficient that differs across ranks as `rank*c + d`.
	"""
	c: int
	d: int

	def resolve(self, rank: int) -> int:
		return rank * self.c + self.d

Coefficient = Union[int, RankLinear]

@dataclass(frozen=True)
class Literal:
	"""
	An offset stored verbatim. `v` becomes a `RankLinear` after inter-process recognition.
	"""
	v: Coefficient

@dataclass(frozen=True)
class IterLinear:
	"""
	The offset of the i-th call of a pattern is `i*a + b`. Either coefficient may be a `RankLinear`.
	"""
	a: Coefficient
	b: Coefficient

OffsetPattern = Union[Literal, IterLinear]

#==============================================================================
#
#   A r g u m e n t   v a l u e s
#
#==============================================================================

@dataclass(frozen=True)
class Int:
	value: int

@dataclass(frozen=True)
class Str:
	value: str

@dataclass(frozen=True)
class Handle:
	"""
	A handle local to one process (file descriptor, `FILE*`, `MPI_File`...).
	"""
	value: int

@dataclass(frozen=True)
class UniqueHandle:
	"""
	A group-wide handle id shared by every rank that took part in a collective open.
	"""
	value: int

@dataclass(frozen=True)
class Offset:
	pattern: OffsetPattern

@dataclass(frozen=True)
class Masked:
	"""
	Stands in for an offset inside pattern keys. `kind` is -1 for a plain mask,
	0 or 1 to keep the Literal/IterLinear shape visible.
	"""
	kind: int = -1

ArgValue = Union[Int, Str, Handle, UniqueHandle, Offset, Masked]

_ARG_TYPES = (Int, Str, Handle, UniqueHandle, Offset, Masked)

def as_arg(value) -> ArgValue:
	"""
	Coerces a plain Python value into an argument value.

	Args:
	- **value (int, str, ArgValue)**: The value to coerce. Booleans are stored as integers.

	Returns:
	- **ArgValue**: The argument value.

	Raises:
	- **InvalidRecord**: If the value has no argument representation.
	"""
	if isinstance(value, _ARG_TYPES):
		return value
	if isinstance(value, bool):
		return Int(int(value))
	if isinstance(value, int):
		return Int(value)
	if isinstance(value, str):
		return Str(value)

	raise InvalidRecord("Expected an int, str or argument value but got %s" % type(value).__name__)

def _format_coefficient(coef) -> str:
	if isinstance(coef, RankLinear):
		return 'rank*%d%+d' % (coef.c, coef.d)
	return str(coef)

def format_arg(arg: ArgValue) -> str:
	"""
	Renders an argument value as text: integers as decimals, strings verbatim,
	local handles as `#n`, group-wide handles as `@n`.
	"""
	if isinstance(arg, (Int, Str)):
		return str(arg.value)
	if isinstance(arg, Handle):
		return '#%d' % arg.value
	if isinstance(arg, UniqueHandle):
		return '@%d' % arg.value
	if isinstance(arg, Offset):
		p = arg.pattern
		if isinstance(p, Literal):
			return _format_coefficient(p.v)
		return 'i*(%s)+(%s)' % (_format_coefficient(p.a), _format_coefficient(p.b))

	return '?'

#==============================================================================
#
#   F u n c t i o n   r e g i s t r y
#
#==============================================================================

@dataclass(frozen=True)
class FunctionInfo:
	"""
	Descriptor of a registered function.

	Attributes:
		- `id`(int): Dense id, assigned in first-registration order.
		- `name`(str): Function name, e.g. `lseek64` or `MPI_File_write_at`.
		- `arity`(int): Number of arguments, return value included when the function has one.
		- `offset_slots`(frozenset): Argument slots carrying file offsets.
		- `layer`(str): I/O layer tag, one of `KNOWN_LAYERS`.
		- `path_slots`(frozenset): Argument slots carrying file paths.
		- `handle_slots`(frozenset): Argument slots referencing an open file handle.
		- `creates_handle`(int, optional): Slot where an open-like call stores the handle it created.
		- `closes_handle`(bool): True for close-like calls.
	"""
	id: int
	name: str
	arity: int
	offset_slots: frozenset = frozenset()
	layer: str = 'posix'
	path_slots: frozenset = frozenset()
	handle_slots: frozenset = frozenset()
	creates_handle: Optional[int] = None
	closes_handle: bool = False

	def to_dict(self) -> dict:
		return {
			'id': self.id,
			'name': self.name,
			'arity': self.arity,
			'offset_slots': sorted(self.offset_slots),
			'layer': self.layer,
			'path_slots': sorted(self.path_slots),
			'handle_slots': sorted(self.handle_slots),
			'creates_handle': self.creates_handle,
			'closes_handle': self.closes_handle
		}

class FunctionRegistry:
	"""
	Bijective mapping between function names and dense 16-bit ids.

	Registration and lookups are serialized by an internal lock, so application threads
	may register functions concurrently.

	Methods:
		- `register_function`(name, arity, offset_slots=(), ...): Registers a function, idempotently.
		- `id_of`(name): Returns the id of a registered name.
		- `info`(func): Returns the `FunctionInfo` of an id.
		- `name`(func): Returns the name of an id.
		- `to_json`() / `from_json`(text): Serializes the registry for archive metadata.
	"""
	def __init__(self):
		self._lock   = threading.Lock()
		self._by_id  = []
		self._by_name = {}

	def __len__(self) -> int:
		return len(self._by_id)

	def __iter__(self):
		return iter(list(self._by_id))

	def __contains__(self, name) -> bool:
		return name in self._by_name

	def __eq__(self, other):
		return isinstance(other, FunctionRegistry) and self._by_id == other._by_id

	def register_function(self, name, arity, offset_slots=(), layer='posix', path_slots=(), handle_slots=(), creates_handle=None, closes_handle=False) -> int:
		"""
		Registers a function and returns its id.

		Re-registering a name returns the existing id once arity and offset slots are verified.

		Args:
		- **name (str)**: Function name, non-empty.
		- **arity (int)**: Number of arguments.
		- **offset_slots (iterable of int, optional)**: Slots declared offset-bearing. Defaults to none.
		- **layer (str, optional)**: Layer tag. Defaults to 'posix'.
		- **path_slots (iterable of int, optional)**: Slots carrying paths, used by the prefix filter.
		- **handle_slots (iterable of int, optional)**: Slots referencing an open handle.
		- **creates_handle (int, optional)**: Slot of the handle an open-like call returns.
		- **closes_handle (bool, optional)**: True for close-like calls. Defaults to False.

		Returns:
		- **int**: The function id.

		Raises:
		- **ConflictingRegistration**: If `name` was registered with another arity or other offset slots.
		- **ValueError**: If the name is empty, a slot is out of range, or the layer is unknown.
		"""
		if not isinstance(name, str) or len(name) == 0:
			raise ValueError("Expected a non-empty function name but got %r" % (name,))
		if layer not in KNOWN_LAYERS:
			raise ValueError("Expected a layer among %s but got %r" % (KNOWN_LAYERS, layer))

		offset_slots = frozenset(offset_slots)
		for slot in offset_slots | frozenset(path_slots) | frozenset(handle_slots):
			if not 0 <= slot < arity:
				raise ValueError("Slot %d is out of range for %s/%d" % (slot, name, arity))

		with self._lock:
			existing = self._by_name.get(name)
			if existing is not None:
				info = self._by_id[existing]
				if info.arity != arity or info.offset_slots != offset_slots:
					raise ConflictingRegistration(
						"%s already registered as arity %d, offset slots %s" % (name, info.arity, sorted(info.offset_slots))
					)
				return existing

			if len(self._by_id) > 0xFFFF:
				raise ValueError("The registry is limited to 65536 functions")

			info = FunctionInfo(
				id             = len(self._by_id),
				name           = name,
				arity          = arity,
				offset_slots   = offset_slots,
				layer          = layer,
				path_slots     = frozenset(path_slots),
				handle_slots   = frozenset(handle_slots),
				creates_handle = creates_handle,
				closes_handle  = closes_handle
			)
			self._by_id.append(info)
			self._by_name[name] = info.id

			return info.id

	def id_of(self, name) -> int:
		try:
			return self._by_name[name]
		except KeyError:
			raise UnknownFunction(name) from None

	def info(self, func) -> FunctionInfo:
		if not 0 <= func < len(self._by_id):
			raise UnknownFunction(func)
		return self._by_id[func]

	def name(self, func) -> str:
		return self.info(func).name

	def check_arity(self, func, args):
		"""
		Verifies that `args` matches the declared arity of `func` and that
		offsets only appear in declared offset slots.

		Raises:
		- **InvalidRecord**: On any mismatch.
		"""
		info = self.info(func)
		if len(args) != info.arity:
			raise InvalidRecord("%s expects %d arguments but got %d" % (info.name, info.arity, len(args)))
		for slot, arg in enumerate(args):
			if isinstance(arg, Offset) and slot not in info.offset_slots:
				raise InvalidRecord("%s: slot %d is not offset-bearing" % (info.name, slot))

	def to_json(self) -> str:
		return json.dumps([info.to_dict() for info in self._by_id], sort_keys=True, separators=(',', ':'))

	@classmethod
	def from_json(cls, text):
		registry = cls()
		for entry in json.loads(text):
			func = registry.register_function(
				entry['name'],
				entry['arity'],
				offset_slots   = entry['offset_slots'],
				layer          = entry['layer'],
				path_slots     = entry['path_slots'],
				handle_slots   = entry['handle_slots'],
				creates_handle = entry['creates_handle'],
				closes_handle  = entry['closes_handle']
			)
			if func != entry['id']:
				raise ValueError("Function ids must be dense, %s has id %d" % (entry['name'], entry['id']))

		return registry

STANDARD_FUNCTIONS = [
	# name, arity, offset slots, layer, path slots, handle slots, creates, closes
	('open',                  3, (),  'posix', (0,), (),   2,    False),
	('close',                 1, (),  'posix', (),   (0,), None, True),
	('write',                 3, (),  'posix', (),   (0,), None, False),
	('read',                  3, (),  'posix', (),   (0,), None, False),
	('lseek',                 3, (1,), 'posix', (),  (0,), None, False),
	('lseek64',               3, (1,), 'posix', (),  (0,), None, False),
	('pwrite',                4, (3,), 'posix', (),  (0,), None, False),
	('pread',                 4, (3,), 'posix', (),  (0,), None, False),
	('fsync',                 1, (),  'posix', (),   (0,), None, False),
	('fopen',                 3, (),  'posix', (0,), (),   2,    False),
	('fwrite',                4, (),  'posix', (),   (3,), None, False),
	('fclose',                1, (),  'posix', (),   (0,), None, True),
	('stat',                  2, (),  'posix', (0,), (),   None, False),
	('mkdir',                 2, (),  'posix', (0,), (),   None, False),
	('MPI_File_open',         5, (),  'mpiio', (1,), (),   4,    False),
	('MPI_File_write_at',     5, (1,), 'mpiio', (), (0,), None, False),
	('MPI_File_write_at_all', 5, (1,), 'mpiio', (), (0,), None, False),
	('MPI_File_read_at',      5, (1,), 'mpiio', (), (0,), None, False),
	('MPI_File_sync',         1, (),  'mpiio', (),   (0,), None, False),
	('MPI_File_close',        1, (),  'mpiio', (),   (0,), None, True),
	('MPI_Send',              6, (),  'mpi',   (),   (),   None, False),
	('MPI_Recv',              6, (),  'mpi',   (),   (),   None, False),
	('MPI_Barrier',           1, (),  'mpi',   (),   (),   None, False),
	('H5Fcreate',             5, (),  'hdf5',  (0,), (),   4,    False),
	('H5Dwrite',              6, (),  'hdf5',  (),   (),   None, False),
	('H5Fclose',              1, (),  'hdf5',  (),   (0,), None, True)
]
""" Functions pre-registered by `standard_registry`."""

def standard_registry() -> FunctionRegistry:
	"""
	Returns a new registry holding `STANDARD_FUNCTIONS`, in that order.
	"""
	registry = FunctionRegistry()
	for name, arity, offsets, layer, paths, handles, creates, closes in STANDARD_FUNCTIONS:
		registry.register_function(
			name, arity, offsets,
			layer          = layer,
			path_slots     = paths,
			handle_slots   = handles,
			creates_handle = creates,
			closes_handle  = closes
		)

	return registry

#==============================================================================
#
#   R e c o r d s   a n d   s i g n a t u r e s
#
#==============================================================================

@dataclass(frozen=True)
class CallRecord:
	"""
	One intercepted call.

	Attributes:
		- `func`(int): Function id.
		- `args`(tuple of ArgValue): Arguments in declaration order.
		- `thread_id`(int): Calling thread, unsigned 32-bit.
		- `call_depth`(int): Nesting level, 0 for calls made by the application itself.
		- `t_entry`(int): Entry time in ticks.
		- `t_exit`(int): Exit time in ticks.
	"""
	func: int
	args: Tuple = field(default_factory=tuple)
	thread_id: int = 0
	call_depth: int = 0
	t_entry: int = 0
	t_exit: int = 0

	def __post_init__(self):
		object.__setattr__(self, 'args', tuple(as_arg(a) for a in self.args))

		if not 0 <= self.func <= 0xFFFF:
			raise InvalidRecord("Function id %d is out of range" % self.func)
		if not 0 <= self.thread_id <= U32_MAX:
			raise InvalidRecord("Thread id %d is out of range" % self.thread_id)
		if not 0 <= self.call_depth <= MAX_CALL_DEPTH:
			raise InvalidRecord("Call depth %d is out of range" % self.call_depth)
		if not (0 <= self.t_entry <= U32_MAX and 0 <= self.t_exit <= U32_MAX):
			raise InvalidRecord("Timestamps (%d, %d) do not fit in 32 bits" % (self.t_entry, self.t_exit))
		if self.t_exit < self.t_entry:
			raise InvalidRecord("Exit time %d precedes entry time %d" % (self.t_exit, self.t_entry))

	def key(self) -> tuple:
		"""
		Returns the fields that make up the signature.
		"""
		return (self.func, self.args, self.thread_id, self.call_depth)

@dataclass(frozen=True)
class CallSignature:
	"""
	Canonical bytes of `(func, args, thread_id, call_depth)`.
	"""
	data: bytes

	def __len__(self) -> int:
		return len(self.data)

	def decode(self):
		"""
		Returns `(func, args, thread_id, call_depth)`.
		"""
		return decode_signature(self.data)

# tag bytes
TAG_INT, TAG_STR, TAG_HANDLE, TAG_UNIQUE, TAG_OFFSET, TAG_MASKED = range(6)
PATTERN_LITERAL, PATTERN_ITER = 0, 1
COEF_PLAIN, COEF_RANK = 2, 3

_HEADER = struct.Struct('<HBIH')
_I64    = struct.Struct('<q')
_U32    = struct.Struct('<I')
_PAIR   = struct.Struct('<qq')

def _encode_coefficient(out, coef):
	if isinstance(coef, RankLinear):
		out.append(COEF_RANK)
		out += _PAIR.pack(coef.c, coef.d)
	else:
		out.append(COEF_PLAIN)
		out += _I64.pack(coef)

def _encode_arg(out, arg):
	if isinstance(arg, Int):
		out.append(TAG_INT)
		out += _I64.pack(arg.value)
	elif isinstance(arg, Str):
		raw = arg.value.encode('utf-8')
		out.append(TAG_STR)
		out += _U32.pack(len(raw))
		out += raw
	elif isinstance(arg, Handle):
		out.append(TAG_HANDLE)
		out += _U32.pack(arg.value)
	elif isinstance(arg, UniqueHandle):
		out.append(TAG_UNIQUE)
		out += _U32.pack(arg.value)
	elif isinstance(arg, Offset):
		p = arg.pattern
		out.append(TAG_OFFSET)
		if isinstance(p, Literal):
			out.append(PATTERN_LITERAL)
			_encode_coefficient(out, p.v)
		elif isinstance(p, IterLinear):
			out.append(PATTERN_ITER)
			_encode_coefficient(out, p.a)
			_encode_coefficient(out, p.b)
		else:
			raise InvalidRecord("Unknown offset pattern %r" % (p,))
	elif isinstance(arg, Masked):
		out.append(TAG_MASKED)
		out += struct.pack('<b', arg.kind)
	else:
		raise InvalidRecord("Expected an argument value but got %s" % type(arg).__name__)

def encode_fields(func, args, thread_id, call_depth) -> bytes:
	"""
	Encodes raw record fields into canonical signature bytes.

	Layout (little-endian): func id u16, depth u8, thread id u32, arg count u16, then per argument
	a tag byte and its payload.

	Raises:
	- **InvalidRecord**: If a field does not fit its fixed width.
	"""
	out = bytearray()
	try:
		out += _HEADER.pack(func, call_depth, thread_id, len(args))
		for arg in args:
			_encode_arg(out, arg)
	except struct.error as e:
		raise InvalidRecord("Field out of range: %s" % e) from None

	return bytes(out)

def make_signature(record: CallRecord, registry: FunctionRegistry = None) -> CallSignature:
	"""
	Builds the call signature of a record. Timestamps play no part.

	Args:
	- **record (CallRecord)**: The record.
	- **registry (FunctionRegistry, optional)**: When given, the record's arity is checked against it.

	Returns:
	- **CallSignature**: The canonical signature.
	"""
	if registry is not None:
		registry.check_arity(record.func, record.args)

	return CallSignature(encode_fields(*record.key()))

class _Reader:
	def __init__(self, data):
		self.data = data
		self.pos  = 0

	def take(self, n):
		if self.pos + n > len(self.data):
			raise InvalidRecord("Signature truncated at byte %d" % self.pos)
		chunk = self.data[self.pos:self.pos + n]
		self.pos += n
		return chunk

	def unpack(self, st):
		return st.unpack(self.take(st.size))

	def byte(self):
		return self.take(1)[0]

def _decode_coefficient(reader):
	tag = reader.byte()
	if tag == COEF_PLAIN:
		return reader.unpack(_I64)[0]
	if tag == COEF_RANK:
		c, d = reader.unpack(_PAIR)
		return RankLinear(c, d)

	raise InvalidRecord("Unknown coefficient tag %d" % tag)

def _decode_arg(reader):
	tag = reader.byte()
	if tag == TAG_INT:
		return Int(reader.unpack(_I64)[0])
	if tag == TAG_STR:
		n = reader.unpack(_U32)[0]
		try:
			return Str(reader.take(n).decode('utf-8'))
		except UnicodeDecodeError:
			raise InvalidRecord("String argument is not valid UTF-8") from None
	if tag == TAG_HANDLE:
		return Handle(reader.unpack(_U32)[0])
	if tag == TAG_UNIQUE:
		return UniqueHandle(reader.unpack(_U32)[0])
	if tag == TAG_OFFSET:
		kind = reader.byte()
		if kind == PATTERN_LITERAL:
			return Offset(Literal(_decode_coefficient(reader)))
		if kind == PATTERN_ITER:
			a = _decode_coefficient(reader)
			b = _decode_coefficient(reader)
			return Offset(IterLinear(a, b))
		raise InvalidRecord("Unknown offset pattern kind %d" % kind)
	if tag == TAG_MASKED:
		return Masked(struct.unpack('<b', reader.take(1))[0])

	raise InvalidRecord("Unknown argument tag %d" % tag)

def decode_signature(data: bytes):
	"""
	Decodes canonical signature bytes.

	Args:
	- **data (bytes)**: Output of `encode_fields`.

	Returns:
	- **tuple**: `(func, args, thread_id, call_depth)` with `args` a tuple of argument values.

	Raises:
	- **InvalidRecord**: If the bytes are truncated, carry unknown tags or trailing garbage.
	"""
	reader = _Reader(bytes(data))
	func, depth, thread_id, nargs = reader.unpack(_HEADER)
	args = tuple(_decode_arg(reader) for _ in range(nargs))
	if reader.pos != len(reader.data):
		raise InvalidRecord("%d trailing bytes after signature" % (len(reader.data) - reader.pos))

	return func, args, thread_id, depth

#EOF
