"""Model backends behind the gateway.

A serving backend is anything with `async def stream(request)` yielding
token strings. The mock family below stands in for real inference
platforms at desk scale; `HttpChatBackend` reaches a remote worker that
speaks the same SSE chat wire format, so actual serving stacks plug in
through a URL without any test depending on one.
"""

import asyncio
import json
import time
from typing import AsyncIterator

import httpx

from ..errors import BackendError


class MockBackend:
    """Emits a fixed number of tokens on an exact delay schedule.

    Token i is released at `first_token_delay_ms + i * per_token_delay_ms`
    after the stream starts; delays anchor to the stream start so timing
    error does not accumulate across tokens.
    """

    def __init__(self, first_token_delay_ms: float, per_token_delay_ms: float, tokens: int):
        if tokens < 1:
            raise ValueError("tokens must be >= 1")
        self.first_token_delay_ms = first_token_delay_ms
        self.per_token_delay_ms = per_token_delay_ms
        self.tokens = tokens

    async def stream(self, request) -> AsyncIterator[str]:
        count = self.tokens
        if getattr(request, "max_tokens", None):
            count = min(count, request.max_tokens)
        start = time.monotonic()
        for i in range(count):
            deadline = start + (self.first_token_delay_ms + i * self.per_token_delay_ms) / 1000.0
            delay = deadline - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            yield f"w{i} "


class EchoBackend:
    """Streams the last message's content back in fixed-size pieces."""

    chunk_size = 16

    async def stream(self, request) -> AsyncIterator[str]:
        content = request.messages[-1].content if request.messages else ""
        if not content:
            yield ""
            return
        for i in range(0, len(content), self.chunk_size):
            yield content[i:i + self.chunk_size]

    def complete(self, prompt: str) -> str:
        return prompt


class StaticBackend:
    """Always answers with the same text."""

    def __init__(self, text: str):
        self.text = text

    async def stream(self, request) -> AsyncIterator[str]:
        yield self.text

    def complete(self, prompt: str) -> str:
        return self.text


class ScriptedBackend:
    """Plays back a list of responses in order; raises once exhausted."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.calls: list[str] = []

    def _next(self, prompt: str) -> str:
        self.calls.append(prompt)
        if not self.responses:
            raise BackendError("scripted backend exhausted")
        return self.responses.pop(0)

    async def stream(self, request) -> AsyncIterator[str]:
        prompt = request.messages[-1].content if request.messages else ""
        yield self._next(prompt)

    def complete(self, prompt: str) -> str:
        return self._next(prompt)


class FailingBackend:
    """Streams a few tokens, then fails mid-stream (for error-path tests)."""

    def __init__(self, tokens_before_failure: int = 2, message: str = "backend exploded"):
        self.tokens_before_failure = tokens_before_failure
        self.message = message

    async def stream(self, request) -> AsyncIterator[str]:
        for i in range(self.tokens_before_failure):
            yield f"w{i} "
        raise BackendError(self.message)


class HttpChatBackend:
    """Client for a remote worker speaking the SSE chat-completions format."""

    def __init__(self, address: str, offline: bool = False):
        self.address = address.rstrip("/")
        self.offline = offline

    async def stream(self, request) -> AsyncIterator[str]:
        from ..config import ensure_outbound_allowed

        ensure_outbound_allowed(self.address, offline=self.offline)
        body = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "max_tokens": request.max_tokens,
            "stream": True,
        }
        async with httpx.AsyncClient() as client:
            async with client.stream(
                "POST", f"{self.address}/v1/chat/completions", json=body, timeout=120.0
            ) as response:
                if response.status_code != 200:
                    raise BackendError(f"worker {self.address} returned {response.status_code}")
                async for line in response.aiter_lines():
                    if not line.startswith("data:"):
                        continue
                    payload = line[len("data:"):].strip()
                    if not payload or payload == "[DONE]":
                        continue
                    obj = json.loads(payload)
                    if "error" in obj:
                        raise BackendError(str(obj["error"]))
                    delta = obj.get("choices", [{}])[0].get("delta", {})
                    token = delta.get("content")
                    if token:
                        yield token
