"""Streaming chat gateway: routes a request to a healthy worker and relays
its token stream as ordered chunks.

Scheduling is round-robin over the healthy workers of the requested model.
Chunks carry strictly increasing sequence numbers and exactly one carries
`is_last`; a worker failure mid-stream surfaces as a terminal error chunk
rather than an exception in the consumer.
"""

import itertools
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import AsyncIterator

from ..errors import UnknownModelError, UnknownWorkerError
from .controller import ModelController


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass
class ChatRequest:
    model: str
    messages: list[ChatMessage]
    max_tokens: int = 256
    stream: bool = True
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)


@dataclass(frozen=True)
class ChatChunk:
    request_id: str
    seq: int
    text: str
    is_first: bool
    is_last: bool
    timestamp: float = 0.0
    error: str | None = None


class Gateway:
    def __init__(self, controller: ModelController):
        self.controller = controller
        self._backends: dict[tuple[str, str], object] = {}
        self._round_robin: dict[str, itertools.count] = {}
        self._local_serial = itertools.count(1)
        self._lock = threading.Lock()

    def add_local_worker(
        self,
        model_name: str,
        backend,
        worker_address: str | None = None,
        capabilities: tuple[str, ...] = ("chat",),
    ) -> str:
        address = worker_address or f"local:{next(self._local_serial)}"
        self.controller.register(model_name, address, capabilities)
        with self._lock:
            self._backends[(model_name, address)] = backend
        return address

    def add_remote_worker(
        self,
        model_name: str,
        worker_address: str,
        capabilities: tuple[str, ...] = ("chat",),
        offline: bool = False,
    ) -> str:
        from .backends import HttpChatBackend

        self.controller.register(model_name, worker_address, capabilities)
        with self._lock:
            self._backends[(model_name, worker_address)] = HttpChatBackend(
                worker_address, offline=offline
            )
        return worker_address

    def touch_local_workers(self, model_name: str | None = None) -> None:
        """Heartbeat in-process workers: their liveness is this process's."""
        with self._lock:
            keys = [
                key for key in self._backends
                if key[1].startswith("local:") and (model_name is None or key[0] == model_name)
            ]
        for model, address in keys:
            try:
                self.controller.heartbeat(model, address)
            except UnknownWorkerError:
                pass

    def _pick_backend(self, model_name: str):
        self.touch_local_workers(model_name)
        candidates = self.controller.healthy_workers(model_name, "chat")
        if not candidates:
            raise UnknownModelError(f"no healthy worker serves model {model_name!r}")
        with self._lock:
            counter = self._round_robin.setdefault(model_name, itertools.count())
            reg = candidates[next(counter) % len(candidates)]
            backend = self._backends.get(reg.key)
        if backend is None:
            raise UnknownWorkerError(f"no backend attached for worker {reg.key}")
        return reg, backend

    async def route_chat(self, request: ChatRequest) -> AsyncIterator[ChatChunk]:
        _reg, backend = self._pick_backend(request.model)
        seq = 0
        pending: str | None = None
        try:
            async for token in backend.stream(request):
                if pending is not None:
                    seq += 1
                    yield ChatChunk(
                        request.request_id, seq, pending,
                        is_first=(seq == 1), is_last=False, timestamp=time.monotonic(),
                    )
                pending = token
        except Exception as exc:
            seq += 1
            yield ChatChunk(
                request.request_id, seq, "",
                is_first=(seq == 1), is_last=True, timestamp=time.monotonic(),
                error=str(exc),
            )
            return
        seq += 1
        yield ChatChunk(
            request.request_id, seq, pending if pending is not None else "",
            is_first=(seq == 1), is_last=True, timestamp=time.monotonic(),
        )

    async def collect_answer(self, request: ChatRequest) -> tuple[str, list[ChatChunk]]:
        """Drain a stream into the final answer text; raises on an error chunk."""
        from ..errors import BackendError

        parts: list[str] = []
        chunks: list[ChatChunk] = []
        async for chunk in self.route_chat(request):
            chunks.append(chunk)
            if chunk.error:
                raise BackendError(chunk.error, request_id=request.request_id)
            parts.append(chunk.text)
        return "".join(parts), chunks


class GatewayCompletionClient:
    """Synchronous completion interface over a streaming gateway model.

    Runs its own event loop, so it must be called from a thread without one
    (worker threads, CLI); never call it from inside the event loop.
    """

    def __init__(self, gateway: Gateway, model: str, max_tokens: int = 1024):
        self.gateway = gateway
        self.model = model
        self.max_tokens = max_tokens

    async def acomplete(self, prompt: str) -> str:
        request = ChatRequest(
            self.model, [ChatMessage("user", prompt)], max_tokens=self.max_tokens
        )
        answer, _ = await self.gateway.collect_answer(request)
        return answer

    def complete(self, prompt: str) -> str:
        import asyncio

        return asyncio.run(self.acomplete(prompt))
