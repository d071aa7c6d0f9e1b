"""Exception hierarchy shared across the package."""


class DbChatError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DbChatError):
    """Invalid configuration; message names the offending field."""


class OfflineViolationError(DbChatError):
    """An outbound connection to a non-loopback host was requested in offline mode."""


# --- ingestion ---

class UnreadableSourceError(DbChatError):
    """Source URI could not be read."""


class EmptyExtractionError(DbChatError):
    """Loaded document yielded no text."""


class InvalidChunkingError(DbChatError):
    """Window/overlap parameters violate 0 <= overlap < window."""


# --- knowledge base ---

class DimensionMismatchError(DbChatError):
    """Vector dimensions do not agree."""


class DuplicateChunkError(DbChatError):
    """A chunk key is already present in the knowledge base."""


class CorruptKnowledgeBaseError(DbChatError):
    """Knowledge-base file failed structural or checksum validation."""


# --- encoder ---

class EmptyTextError(DbChatError):
    """Embedding requested for empty text."""


class PoolTooSmallError(DbChatError):
    """Not enough candidate texts to sample the requested negatives."""


class TrainingDivergedError(DbChatError):
    """Training produced a non-finite loss; message carries diagnostics."""


# --- retrieval ---

class EmptyKnowledgeBaseError(DbChatError):
    """Retrieval against a knowledge base with no chunks."""


class EmptyQueryError(DbChatError):
    """Query has no indexable terms."""


class ZeroVectorError(DbChatError):
    """Cosine similarity is undefined for a zero vector."""


# --- prompt generation ---

class TemplateError(DbChatError):
    """Prompt template violates its structural invariants."""


class UnsortedContextsError(DbChatError):
    """Context selection requires input sorted by score descending."""


class MissingQuestionError(DbChatError):
    """Prompt rendering requires a non-empty question."""


# --- text-to-SQL ---

class SchemaIntegrityError(DbChatError):
    """Schema description references a missing table or column."""


class NonSelectError(DbChatError):
    """Read-only guard rejected a statement that is not a SELECT."""


class SqlParseError(DbChatError):
    """SQL failed to parse."""


class QueryTimeoutError(DbChatError):
    """Query exceeded the wall-clock limit."""


class QueryExecutionError(DbChatError):
    """Query failed during execution."""


class MissingDatabaseError(DbChatError):
    """No fixture database available for a db_id."""


class MissingSchemaError(DbChatError):
    """No schema description available for a db_id."""


class BackendError(DbChatError):
    """Model backend call failed; carries the request id for correlation."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


class EmptyCompletionError(BackendError):
    """Model backend returned an empty completion."""


# --- serving gateway ---

class UnknownModelError(DbChatError):
    """No healthy worker serves the requested model."""


class DuplicateWorkerError(DbChatError):
    """A worker with the same (model, address) is already registered."""


class UnknownWorkerError(DbChatError):
    """Heartbeat or removal for a worker that was never registered."""


class BenchAbortedError(DbChatError):
    """A benchmark request failed; the partial report is flagged invalid."""


# --- agents ---

class UnknownToolError(DbChatError):
    """Tool id not present in the registry."""


class DuplicateToolError(DbChatError):
    """Tool id already registered."""


class AgentBackendError(DbChatError):
    """The agent's model backend failed; the episode aborts."""
