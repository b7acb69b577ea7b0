"""Runtime configuration read from the environment."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping, Optional

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_LISTEN = "127.0.0.1:8080"
DEFAULT_MAX_CONCURRENCY = 4


@dataclass(frozen=True)
class Settings:
    backend_url: Optional[str] = None
    backend_model: str = ""
    backend_key: str = ""
    backend_timeout_s: float = DEFAULT_TIMEOUT_S
    listen: str = DEFAULT_LISTEN

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None) -> "Settings":
        env = os.environ if env is None else env
        timeout = env.get("MBE_BACKEND_TIMEOUT_S")
        return cls(
            backend_url=env.get("MBE_BACKEND_URL") or None,
            backend_model=env.get("MBE_BACKEND_MODEL", ""),
            backend_key=env.get("MBE_BACKEND_KEY", ""),
            backend_timeout_s=float(timeout) if timeout else DEFAULT_TIMEOUT_S,
            listen=env.get("MBE_LISTEN") or DEFAULT_LISTEN,
        )

    @property
    def listen_host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)
