"""Latency/throughput benchmark against the gateway.

Per request: first-token latency (receipt to first decoded token, ms) and
inference latency (receipt to complete response, s). Throughput is total
output tokens across all requests divided by the wall clock of the whole
run. Every run uses the same fixed-size prompt and output budget so
numbers are comparable across models and concurrency levels.
"""

import asyncio
import statistics
import time
from dataclasses import asdict, dataclass, field

from ..errors import BenchAbortedError
from .gateway import ChatMessage, ChatRequest, Gateway

DEFAULT_PROMPT_TOKENS = 8
DEFAULT_OUTPUT_TOKENS = 256


@dataclass(frozen=True)
class BenchSample:
    request_id: str
    ftl_ms: float
    il_s: float
    output_tokens: int


@dataclass
class BenchReport:
    model: str
    concurrency: int
    requests_per_worker: int
    prompt_tokens: int
    output_tokens: int
    wall_clock_s: float
    ftl_mean_ms: float
    ftl_median_ms: float
    il_mean_s: float
    throughput_tokens_per_s: float
    valid: bool
    error: str | None = None
    samples: list[BenchSample] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


async def run_bench_async(
    gateway: Gateway,
    model: str,
    concurrency: int,
    requests_per_worker: int,
    prompt_tokens: int = DEFAULT_PROMPT_TOKENS,
    output_tokens: int = DEFAULT_OUTPUT_TOKENS,
) -> BenchReport:
    if concurrency < 1 or requests_per_worker < 1:
        raise ValueError("concurrency and requests_per_worker must be >= 1")
    prompt = " ".join(f"p{i}" for i in range(prompt_tokens))
    messages = [ChatMessage("user", prompt)]

    async def request_loop() -> list[BenchSample]:
        collected: list[BenchSample] = []
        for _ in range(requests_per_worker):
            request = ChatRequest(model, messages, max_tokens=output_tokens)
            t_receipt = time.monotonic()
            t_first: float | None = None
            t_done = t_receipt
            count = 0
            async for chunk in gateway.route_chat(request):
                if chunk.error:
                    raise BenchAbortedError(chunk.error)
                if t_first is None:
                    t_first = chunk.timestamp
                t_done = chunk.timestamp
                count += 1
            if count < 1 or t_first is None:
                raise BenchAbortedError("stream produced no tokens")
            collected.append(
                BenchSample(
                    request.request_id,
                    ftl_ms=(t_first - t_receipt) * 1000.0,
                    il_s=t_done - t_receipt,
                    output_tokens=count,
                )
            )
        return collected

    wall_start = time.monotonic()
    tasks = [asyncio.ensure_future(request_loop()) for _ in range(concurrency)]
    done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
    for task in pending:
        task.cancel()
    if pending:
        await asyncio.gather(*pending, return_exceptions=True)
    wall_clock = time.monotonic() - wall_start

    samples: list[BenchSample] = []
    error: str | None = None
    for task in done:
        exc = task.exception()
        if exc is not None:
            error = error or str(exc)
        else:
            samples.extend(task.result())

    ftls = [s.ftl_ms for s in samples]
    ils = [s.il_s for s in samples]
    total_tokens = sum(s.output_tokens for s in samples)
    return BenchReport(
        model=model,
        concurrency=concurrency,
        requests_per_worker=requests_per_worker,
        prompt_tokens=prompt_tokens,
        output_tokens=output_tokens,
        wall_clock_s=wall_clock,
        ftl_mean_ms=statistics.fmean(ftls) if ftls else 0.0,
        ftl_median_ms=statistics.median(ftls) if ftls else 0.0,
        il_mean_s=statistics.fmean(ils) if ils else 0.0,
        throughput_tokens_per_s=total_tokens / wall_clock if wall_clock > 0 else 0.0,
        valid=error is None and not pending,
        error=error,
        samples=samples,
    )


def run_bench(
    gateway: Gateway,
    model: str,
    concurrency: int,
    requests_per_worker: int,
    prompt_tokens: int = DEFAULT_PROMPT_TOKENS,
    output_tokens: int = DEFAULT_OUTPUT_TOKENS,
) -> BenchReport:
    return asyncio.run(
        run_bench_async(
            gateway, model, concurrency, requests_per_worker, prompt_tokens, output_tokens
        )
    )


def format_bench_table(reports: "BenchReport | list[BenchReport]") -> str:
    """Aligned text table: model, concurrency, FTL (ms), IL (s), throughput (tokens/s)."""
    if isinstance(reports, BenchReport):
        reports = [reports]
    header = (
        f"{'Model':<20s}  {'#Ccr':>4s}  {'FTL (ms)':>9s}  {'IL (s)':>7s}  "
        f"{'Throughput (tokens/s)':>22s}"
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        flag = "" if r.valid else "  [INVALID]"
        lines.append(
            f"{r.model:<20s}  {r.concurrency:>4d}  {r.ftl_mean_ms:>9.1f}  "
            f"{r.il_mean_s:>7.2f}  {r.throughput_tokens_per_s:>22.1f}{flag}"
        )
    return "\n".join(lines)
