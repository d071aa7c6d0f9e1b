"""Service-oriented multi-model layer: worker registry, streaming gateway,
pluggable backends, and the latency/throughput benchmark harness."""

from .backends import (
    EchoBackend,
    FailingBackend,
    HttpChatBackend,
    MockBackend,
    ScriptedBackend,
    StaticBackend,
)
from .controller import ModelController, ModelRegistration
from .gateway import ChatChunk, ChatMessage, ChatRequest, Gateway
from .bench import BenchReport, BenchSample, format_bench_table, run_bench, run_bench_async

__all__ = [
    "BenchReport",
    "BenchSample",
    "ChatChunk",
    "ChatMessage",
    "ChatRequest",
    "EchoBackend",
    "FailingBackend",
    "Gateway",
    "HttpChatBackend",
    "MockBackend",
    "ModelController",
    "ModelRegistration",
    "ScriptedBackend",
    "StaticBackend",
    "format_bench_table",
    "run_bench",
    "run_bench_async",
]
