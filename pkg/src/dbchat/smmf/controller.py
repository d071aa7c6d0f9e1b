"""Model controller: worker registry, heartbeats, and health metadata.

A worker is keyed by (model_name, worker_address). It turns stale after
missing `max_missed` heartbeats of `heartbeat_window_s` each, and once a
removal is acknowledged it is never listed again. The clock is injectable
so staleness is testable with a simulated clock.
"""

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from ..errors import DuplicateWorkerError, UnknownWorkerError

HEARTBEAT_WINDOW_S = 10.0
MAX_MISSED_HEARTBEATS = 3

CAPABILITIES = ("chat", "embedding")


@dataclass
class ModelRegistration:
    model_name: str
    worker_address: str
    capabilities: frozenset[str]
    last_heartbeat: float
    removed: bool = False

    @property
    def key(self) -> tuple[str, str]:
        return (self.model_name, self.worker_address)


@dataclass(frozen=True)
class RegistrationView:
    model_name: str
    worker_address: str
    capabilities: tuple[str, ...]
    status: str
    heartbeat_deadline: float


class ModelController:
    def __init__(
        self,
        clock: Callable[[], float] = time.monotonic,
        heartbeat_window_s: float = HEARTBEAT_WINDOW_S,
        max_missed: int = MAX_MISSED_HEARTBEATS,
    ):
        self.clock = clock
        self.heartbeat_window_s = heartbeat_window_s
        self.max_missed = max_missed
        self._registry: dict[tuple[str, str], ModelRegistration] = {}
        self._lock = threading.Lock()

    def register(
        self,
        model_name: str,
        worker_address: str,
        capabilities: tuple[str, ...] = ("chat",),
    ) -> ModelRegistration:
        unknown = set(capabilities) - set(CAPABILITIES)
        if unknown:
            raise ValueError(f"unknown capabilities: {sorted(unknown)}")
        key = (model_name, worker_address)
        with self._lock:
            existing = self._registry.get(key)
            if existing is not None and not existing.removed:
                raise DuplicateWorkerError(f"worker already registered: {key}")
            reg = ModelRegistration(
                model_name, worker_address, frozenset(capabilities), self.clock()
            )
            self._registry[key] = reg
            return reg

    def heartbeat(self, model_name: str, worker_address: str) -> None:
        with self._lock:
            reg = self._registry.get((model_name, worker_address))
            if reg is None or reg.removed:
                raise UnknownWorkerError(f"no such worker: {(model_name, worker_address)}")
            reg.last_heartbeat = self.clock()

    def remove(self, model_name: str, worker_address: str) -> None:
        with self._lock:
            reg = self._registry.get((model_name, worker_address))
            if reg is None:
                raise UnknownWorkerError(f"no such worker: {(model_name, worker_address)}")
            reg.removed = True

    def _deadline(self, reg: ModelRegistration) -> float:
        return reg.last_heartbeat + self.heartbeat_window_s * self.max_missed

    def status(self, reg: ModelRegistration) -> str:
        if reg.removed:
            return "removed"
        return "stale" if self.clock() > self._deadline(reg) else "healthy"

    def list_models(self) -> list[RegistrationView]:
        """Healthy registrations only, in deterministic (model, address) order."""
        with self._lock:
            views = [
                RegistrationView(
                    reg.model_name,
                    reg.worker_address,
                    tuple(sorted(reg.capabilities)),
                    "healthy",
                    self._deadline(reg),
                )
                for reg in self._registry.values()
                if self.status(reg) == "healthy"
            ]
        return sorted(views, key=lambda v: (v.model_name, v.worker_address))

    def healthy_workers(self, model_name: str, capability: str = "chat") -> list[ModelRegistration]:
        with self._lock:
            regs = [
                reg
                for reg in self._registry.values()
                if reg.model_name == model_name
                and capability in reg.capabilities
                and self.status(reg) == "healthy"
            ]
        return sorted(regs, key=lambda r: r.worker_address)
