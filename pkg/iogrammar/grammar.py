"""
Online grammar inference over terminal streams.

The builder implements Sequitur with a run-length extension: every symbol carries an
exponent, adjacent symbols with the same id are coalesced into one, and digrams are
compared on `(id, exponent)` pairs. A loop body repeated `m` times therefore shows up as
a single `A^m` symbol instead of a chain of rules.

Terminals are non-negative integers (indices into a call signature table). Rules have
negative ids; the start rule is always -1.

**Constants**
* `START_RULE`: Id of the start rule.
* `MAX_EXPANSION`: Default bound on the expanded length of a grammar.

**Construction**
* `GrammarBuilder`: Mutable grammar fed one terminal at a time.
* `build_grammar`: Builds a grammar from a whole terminal sequence.

**Snapshots**
* `Symbol`: One `(id, exponent)` body symbol.
* `Grammar`: Immutable, canonically numbered grammar.
* `remap_terminals`: Rewrites terminals through a mapping, re-establishing the invariants.
* `grammar_equal`: Byte equality of canonical serializations.
* `validate_grammar`: Full scan of the grammar invariants.
"""
import logging
import struct

from typing import NamedTuple

from iogrammar.exceptions import MalformedGrammar, IncompleteMapping

logger = logging.getLogger(__name__)

__all__ = [
	'START_RULE',
	'MAX_EXPANSION',
	'Symbol',
	'Grammar',
	'GrammarBuilder',
	'build_grammar',
	'remap_terminals',
	'grammar_equal',
	'validate_grammar'
]

START_RULE = -1
""" Id of the start rule S."""

MAX_EXPANSION = 2**32
""" Default upper bound on the number of terminals a grammar may expand to."""

_U32     = struct.Struct('<I')
_RULE    = struct.Struct('<iI')
_SYMBOL  = struct.Struct('<iI')

#==============================================================================
#
#   S n a p s h o t s
#
#==============================================================================

class Symbol(NamedTuple):
	id: int
	exponent: int = 1

	def is_rule(self) -> bool:
		return self.id < 0

class Grammar:
	"""
	Immutable grammar snapshot.

	Rules are numbered canonically: the start rule is -1 and the other rules get -2, -3, ...
	in order of first reference, scanning rule bodies breadth-first from the start rule.
	Two grammars describing the same symbol structure therefore serialize to the same bytes.

	Attributes:
		- `rules`(dict): Rule id to tuple of `Symbol`, in canonical order.
		- `start_rule`(int): Always `START_RULE`.
	"""
	start_rule = START_RULE

	def __init__(self, rules=None):
		self.rules = dict(rules) if rules else {START_RULE: ()}
		if START_RULE not in self.rules:
			raise MalformedGrammar("A grammar needs a start rule %d" % START_RULE)
		self._bytes = None

	def __repr__(self):
		def fmt(sym):
			name = 'R%d' % -sym.id if sym.is_rule() else str(sym.id)
			return name if sym.exponent == 1 else '%s^%d' % (name, sym.exponent)

		bodies = ['R%d -> %s' % (-rid, ' '.join(fmt(s) for s in body)) for rid, body in self.rules.items()]
		return 'Grammar(%s)' % '; '.join(bodies)

	def __eq__(self, other):
		return isinstance(other, Grammar) and self.to_bytes() == other.to_bytes()

	def __hash__(self):
		return hash(self.to_bytes())

	def rule_count(self) -> int:
		return len(self.rules)

	def symbol_count(self) -> int:
		"""
		Returns the total number of body symbols over all rules, exponents not counted.
		"""
		return sum(len(body) for body in self.rules.values())

	def terminals(self) -> set:
		return {sym.id for body in self.rules.values() for sym in body if sym.id >= 0}

	def expanded_lengths(self, max_length=MAX_EXPANSION) -> dict:
		"""
		Computes the expanded length of every rule.

		Args:
		- **max_length (int, optional)**: Any rule expanding past this bound is an error. Defaults to `MAX_EXPANSION`.

		Returns:
		- **dict**: Rule id to expanded length.

		Raises:
		- **MalformedGrammar**: On dangling rule references, cycles, or oversize expansions.
		"""
		lengths = {}
		visiting = set()

		for root in self.rules:
			if root in lengths:
				continue
			stack = [root]
			while stack:
				rid = stack[-1]
				if rid in lengths:
					stack.pop()
					continue
				visiting.add(rid)
				pending = False
				for sym in self.rules[rid]:
					if sym.id < 0 and sym.id not in lengths:
						if sym.id not in self.rules:
							raise MalformedGrammar("Rule %d references undefined rule %d" % (rid, sym.id))
						if sym.id in visiting:
							raise MalformedGrammar("Rule %d is part of a reference cycle" % sym.id)
						stack.append(sym.id)
						pending = True
						break
				if pending:
					continue

				total = 0
				for sym in self.rules[rid]:
					total += sym.exponent * (lengths[sym.id] if sym.id < 0 else 1)
					if total > max_length:
						raise MalformedGrammar("Rule %d expands past %d terminals" % (rid, max_length))
				lengths[rid] = total
				visiting.discard(rid)
				stack.pop()

		return lengths

	def __len__(self) -> int:
		return self.expanded_lengths()[START_RULE]

	def iter_expand(self, max_length=MAX_EXPANSION):
		"""
		Yields the terminals of the start rule in order. Lengths are validated before the
		first terminal is produced.
		"""
		self.expanded_lengths(max_length)

		# frames of (body, position, remaining repetitions)
		stack = [(self.rules[START_RULE], 0, 1)]
		while stack:
			body, pos, reps = stack.pop()
			if pos == len(body):
				if reps > 1:
					stack.append((body, 0, reps - 1))
				continue
			sym = body[pos]
			stack.append((body, pos + 1, reps))
			if sym.id >= 0:
				for _ in range(sym.exponent):
					yield sym.id
			else:
				stack.append((self.rules[sym.id], 0, sym.exponent))

	def expand(self, max_length=MAX_EXPANSION) -> list:
		"""
		Expands the start rule back into the terminal sequence it encodes.

		Args:
		- **max_length (int, optional)**: Cycle and size guard. Defaults to `MAX_EXPANSION`.

		Returns:
		- **list of int**: The terminal sequence, in append order.

		Raises:
		- **MalformedGrammar**: If a rule id is dangling, rules form a cycle, or the expansion exceeds `max_length`.
		"""
		return list(self.iter_expand(max_length))

	def to_bytes(self) -> bytes:
		"""
		Canonical serialization: rule count u32, then per rule its id (i32), its symbol count (u32)
		and `(id i32, exponent u32)` pairs. Little-endian.
		"""
		if self._bytes is None:
			out = bytearray(_U32.pack(len(self.rules)))
			for rid, body in self.rules.items():
				out += _RULE.pack(rid, len(body))
				for sym in body:
					out += _SYMBOL.pack(sym.id, sym.exponent)
			self._bytes = bytes(out)

		return self._bytes

	@classmethod
	def from_bytes(cls, data, offset=0):
		"""
		Parses a serialized grammar.

		Args:
		- **data (bytes)**: Buffer holding the grammar.
		- **offset (int, optional)**: Where the grammar starts in `data`. Defaults to 0.

		Returns:
		- **tuple**: `(Grammar, end offset)`.

		Raises:
		- **MalformedGrammar**: On truncation, duplicate or positive rule ids, zero exponents,
			dangling references or a missing start rule. The message carries the byte offset.
		"""
		def unpack(st, pos):
			if pos + st.size > len(data):
				raise MalformedGrammar("Grammar truncated at byte %d" % pos)
			return st.unpack_from(data, pos), pos + st.size

		(count,), pos = unpack(_U32, offset)
		rules = {}
		for _ in range(count):
			(rid, nsyms), pos = unpack(_RULE, pos)
			if rid >= 0 or rid in rules:
				raise MalformedGrammar("Invalid rule id %d at byte %d" % (rid, pos - _RULE.size))
			if pos + nsyms * _SYMBOL.size > len(data):
				raise MalformedGrammar("Grammar truncated at byte %d" % pos)
			body = []
			for _ in range(nsyms):
				(sid, exp), pos = unpack(_SYMBOL, pos)
				if exp == 0:
					raise MalformedGrammar("Zero exponent at byte %d" % (pos - _SYMBOL.size))
				body.append(Symbol(sid, exp))
			rules[rid] = tuple(body)

		if START_RULE not in rules:
			raise MalformedGrammar("Grammar at byte %d has no start rule" % offset)

		grammar = cls(rules)
		grammar.expanded_lengths()

		return grammar, pos

def _canonical(bodies, start):
	"""
	Renumbers rules in breadth-first order of first reference from `start`.
	`bodies` maps internal rule keys to lists of `(key or terminal, exponent, is_rule)`.
	"""
	order = [start]
	names = {start: START_RULE}
	i = 0
	while i < len(order):
		for sym, _, is_rule in bodies[order[i]]:
			if is_rule and sym not in names:
				names[sym] = -(len(order) + 1)
				order.append(sym)
		i += 1

	rules = {}
	for key in order:
		rules[names[key]] = tuple(
			Symbol(names[sym] if is_rule else sym, exp) for sym, exp, is_rule in bodies[key]
		)

	return Grammar(rules)

#==============================================================================
#
#   O n l i n e   c o n s t r u c t i o n
#
#==============================================================================

class _Node:
	__slots__ = ('sym', 'exp', 'prev', 'next', 'rule', 'alive')

	def __init__(self, sym, exp=1, rule=None):
		self.sym   = sym
		self.exp   = exp
		self.prev  = None
		self.next  = None
		self.rule  = rule
		self.alive = True

class _Rule:
	__slots__ = ('id', 'guard', 'uses')

	def __init__(self, rid):
		self.id    = rid
		self.uses  = 0
		self.guard = _Node(None, 0, self)
		self.guard.prev = self.guard
		self.guard.next = self.guard

	def nodes(self):
		node = self.guard.next
		while node is not self.guard:
			yield node
			node = node.next

class GrammarBuilder:
	"""
	Run-length Sequitur grammar built one terminal at a time.

	After every `append` the following hold:
	- no digram (compared on id and exponent) occurs twice across all rule bodies;
	- every rule but the start rule is referenced with a total exponent of at least 2;
	- no two adjacent symbols share an id;
	- rule references form a DAG.

	A builder is single-owner; callers serialize access.

	Methods:
		- `append`(terminal): Appends one terminal.
		- `extend`(terminals): Appends a sequence of terminals.
		- `snapshot`(): Returns the current `Grammar`.
	"""
	def __init__(self):
		self._rules   = {}
		self._index   = {}
		self._next_id = START_RULE
		self._length  = 0
		self._start   = self._new_rule()

	def __len__(self) -> int:
		return self._length

	def append(self, terminal):
		"""
		Appends one terminal to the start rule.

		Args:
		- **terminal (int)**: Terminal index, non-negative.

		Raises:
		- **ValueError**: If the terminal is negative.
		"""
		if terminal < 0:
			raise ValueError("Expected a non-negative terminal but got %d" % terminal)

		guard = self._start.guard
		last  = guard.prev
		if last is not guard and last.sym == terminal:
			self._forget(last.prev)
			last.exp += 1
			self._check(last.prev)
		else:
			node = _Node(terminal)
			self._link(last, node, guard)
			self._check(last)

		self._length += 1

	def extend(self, terminals):
		for terminal in terminals:
			self.append(terminal)

	def snapshot(self) -> Grammar:
		"""
		Returns an immutable, canonically numbered copy of the grammar.
		"""
		bodies = {
			rid: [(n.sym, n.exp, n.sym < 0) for n in rule.nodes()]
			for rid, rule in self._rules.items()
		}
		return _canonical(bodies, self._start.id)

	#--------------------------------------------------------------------------
	# Linked list primitives
	#--------------------------------------------------------------------------

	def _new_rule(self) -> _Rule:
		rule = _Rule(self._next_id)
		self._next_id -= 1
		self._rules[rule.id] = rule
		return rule

	@staticmethod
	def _link(left, node, right):
		node.prev  = left
		node.next  = right
		left.next  = node
		right.prev = node

	@staticmethod
	def _unlink(node):
		node.prev.next = node.next
		node.next.prev = node.prev
		node.alive = False

	def _remove(self, node):
		self._unlink(node)
		if node.sym < 0:
			self._rules[node.sym].uses -= node.exp

	@staticmethod
	def _key(node):
		return (node.sym, node.exp, node.next.sym, node.next.exp)

	@staticmethod
	def _is_digram(node) -> bool:
		return node.alive and node.sym is not None and node.next.sym is not None

	def _forget(self, node):
		""" Drops the index entry of the digram starting at `node`, if it points there. """
		if node.sym is None or node.next.sym is None:
			return
		key = self._key(node)
		if self._index.get(key) is node:
			del self._index[key]

	#--------------------------------------------------------------------------
	# Invariant enforcement
	#--------------------------------------------------------------------------

	def _check(self, node) -> bool:
		"""
		Indexes the digram starting at `node`, or rewrites it if it already occurs elsewhere.
		Returns True when the structure changed.
		"""
		if not self._is_digram(node):
			return False

		key   = self._key(node)
		found = self._index.get(key)
		if found is None or not found.alive or self._key(found) != key:
			self._index[key] = node
			return False
		if found is node or found.next is node or node.next is found:
			return False

		self._match(node, found)
		return True

	def _recheck(self, *nodes):
		for node in nodes:
			if node.alive and node.sym is not None:
				self._check(node)

	def _match(self, node, found):
		if found.prev.sym is None and found.next.next.sym is None and found.prev.rule is not self._start:
			rule = found.prev.rule
			self._substitute(node, rule)
		else:
			rule = self._new_rule()
			for src in (node, node.next):
				copy = _Node(src.sym, src.exp)
				self._link(rule.guard.prev, copy, rule.guard)
				if copy.sym < 0:
					self._rules[copy.sym].uses += copy.exp
			self._index[self._key(rule.guard.next)] = rule.guard.next
			self._substitute(found, rule)
			self._substitute(node, rule)

		if rule.id not in self._rules:
			return
		for body_node in list(rule.nodes())[:2]:
			if body_node.alive and body_node.sym < 0:
				used = self._rules.get(body_node.sym)
				if used is not None and used.uses == 1:
					self._expand(body_node)

	def _substitute(self, node, rule):
		""" Replaces the digram starting at `node` with a reference to `rule`. """
		prev   = node.prev
		second = node.next
		right  = second.next

		self._forget(prev)
		self._forget(node)
		self._forget(second)
		self._remove(node)
		self._remove(second)

		ref = _Node(rule.id)
		rule.uses += 1
		self._link(prev, ref, right)

		ref = self._coalesce(ref)
		self._recheck(ref.prev, ref)

	def _merge(self, left) -> bool:
		""" Folds `left.next` into `left` when both carry the same id. """
		right = left.next
		if left.sym is None or right.sym is None or left.sym != right.sym:
			return False

		self._forget(left.prev)
		self._forget(left)
		self._forget(right)
		left.exp += right.exp
		self._unlink(right)

		return True

	def _coalesce(self, node):
		left = node.prev
		if self._merge(left):
			node = left
		self._merge(node)
		return node

	def _expand(self, node):
		""" Inlines the body of a rule referenced only once, at `node`. """
		rule = self._rules.pop(node.sym)
		prev = node.prev
		right = node.next

		self._forget(prev)
		self._forget(node)
		self._unlink(node)

		first = rule.guard.next
		last  = rule.guard.prev
		prev.next  = first
		first.prev = prev
		last.next  = right
		right.prev = last

		touched = [prev]
		if self._merge(prev):
			touched.insert(0, prev.prev)
			if last is first:
				last = prev
		if self._merge(last):
			touched.append(last.prev)
		touched.append(last)

		self._recheck(*touched)

def build_grammar(terminals) -> Grammar:
	"""
	Builds a grammar from a whole terminal sequence.

	Args:
	- **terminals (iterable of int)**: The sequence.

	Returns:
	- **Grammar**: The snapshot after the last append.
	"""
	builder = GrammarBuilder()
	builder.extend(terminals)

	return builder.snapshot()

#==============================================================================
#
#   G r a m m a r   o p e r a t i o n s
#
#==============================================================================

def remap_terminals(grammar, mapping) -> Grammar:
	"""
	Rewrites every terminal of a grammar through `mapping`.

	An injective mapping keeps the structure and only relabels terminals. A mapping that
	merges terminals may create equal adjacent symbols or repeated digrams; the grammar is
	then rebuilt from the mapped expansion.

	Args:
	- **grammar (Grammar)**: Source grammar.
	- **mapping (dict or sequence)**: Old terminal to new terminal.

	Returns:
	- **Grammar**: Grammar whose expansion is the pointwise mapped expansion of `grammar`.

	Raises:
	- **IncompleteMapping**: If a terminal of `grammar` has no image.
	"""
	terminals = grammar.terminals()
	images = {}
	for t in terminals:
		try:
			images[t] = mapping[t]
		except (KeyError, IndexError):
			raise IncompleteMapping("No mapping for terminal %d" % t) from None

	if len(set(images.values())) == len(images):
		rules = {
			rid: tuple(Symbol(images[s.id], s.exponent) if s.id >= 0 else s for s in body)
			for rid, body in grammar.rules.items()
		}
		return Grammar(rules)

	logger.debug("Terminal mapping merges %d terminals into %d, rebuilding grammar", len(images), len(set(images.values())))
	return build_grammar(images[t] for t in grammar.iter_expand())

def grammar_equal(g1, g2) -> bool:
	"""
	Returns True iff both grammars have byte-identical canonical serializations.
	"""
	return g1.to_bytes() == g2.to_bytes()

def validate_grammar(grammar):
	"""
	Scans a grammar for violations of the builder invariants.

	Raises:
	- **MalformedGrammar**: Naming the first violation found: dangling reference or cycle,
		equal adjacent ids, a repeated digram, or an under-used rule.
	"""
	grammar.expanded_lengths()

	uses = {rid: 0 for rid in grammar.rules if rid != START_RULE}
	seen = {}
	for rid, body in grammar.rules.items():
		for sym in body:
			if sym.id < 0:
				if sym.id == START_RULE:
					raise MalformedGrammar("Rule %d references the start rule" % rid)
				uses[sym.id] += sym.exponent
		for left, right in zip(body, body[1:]):
			if left.id == right.id:
				raise MalformedGrammar("Rule %d has adjacent symbols with id %d" % (rid, left.id))
			digram = (left, right)
			if digram in seen:
				raise MalformedGrammar("Digram %s occurs in rules %d and %d" % (digram, seen[digram], rid))
			seen[digram] = rid

	for rid, count in uses.items():
		if count < 2:
			raise MalformedGrammar("Rule %d is referenced %d time(s)" % (rid, count))

#EOF
