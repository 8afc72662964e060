"""
Errors raised by the `iogrammar` package.

Every error derives from `IOGrammarError`. Errors caused by bad input data also derive from
`ValueError`, so callers that only care about "this value was wrong" can keep catching that.

* `ConflictingRegistration`: a function name was registered twice with different descriptors.
* `UnknownFunction`: a function id or name is not in the registry.
* `InvalidRecord`: a call record or signature violates its invariants.
* `MalformedGrammar`: a grammar has dangling rule references, cycles, or expands past the bound.
* `IncompleteMapping`: a terminal remapping does not cover every terminal of a grammar.
* `TableFull`: a call signature table ran out of terminal indices.
* `DoubleOpen`: a local handle is already mapped to a group-wide id.
* `DepthOverflow`: call nesting went beyond the maximum call depth.
* `StackMismatch`: a call completed out of LIFO order.
* `UnbalancedCalls`: a rank was finalized with calls still open.
* `CorruptArchive`: an on-disk archive failed validation.
* `IoFailure`: the filesystem refused an archive read or write.
* `InvalidWorkload`: a workload description is inconsistent.
"""

__all__ = [
	'IOGrammarError',
	'ConflictingRegistration',
	'UnknownFunction',
	'InvalidRecord',
	'MalformedGrammar',
	'IncompleteMapping',
	'TableFull',
	'DoubleOpen',
	'DepthOverflow',
	'StackMismatch',
	'UnbalancedCalls',
	'CorruptArchive',
	'IoFailure',
	'InvalidWorkload'
]

class IOGrammarError(Exception):
	"""
	Root of all errors raised by this package.
	"""

class ConflictingRegistration(IOGrammarError, ValueError):
	pass

class UnknownFunction(IOGrammarError, KeyError):
	pass

class InvalidRecord(IOGrammarError, ValueError):
	pass

class MalformedGrammar(IOGrammarError, ValueError):
	pass

class IncompleteMapping(IOGrammarError, KeyError):
	pass

class TableFull(IOGrammarError, OverflowError):
	pass

class DoubleOpen(IOGrammarError, ValueError):
	pass

class DepthOverflow(IOGrammarError, OverflowError):
	pass

class StackMismatch(IOGrammarError, RuntimeError):
	pass

class UnbalancedCalls(IOGrammarError, RuntimeError):
	pass

class CorruptArchive(IOGrammarError, ValueError):
	"""
	Raised when an archive file fails validation.

	Attributes:
	- **filename (str)**: The archive member that failed (e.g. `cst.dat`).
	- **offset (int)**: Byte offset inside that file where decoding stopped, or None when unknown.
	- **reason (str)**: What was wrong.
	"""
	def __init__(self, filename, offset, reason):
		self.filename = filename
		self.offset   = offset
		self.reason   = reason

		where = filename if offset is None else '%s@%d' % (filename, offset)
		super().__init__('%s: %s' % (where, reason))

class IoFailure(IOGrammarError, OSError):
	pass

class InvalidWorkload(IOGrammarError, ValueError):
	pass

#EOF
