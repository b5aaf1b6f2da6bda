"""
Shared HTTP plumbing for the scholarly index clients: a per-service rate
limiter, a retrying requests session and the on-disk response cache.
"""

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from pathlib import Path
from typing import Any, Optional, Tuple

import requests

from . import __version__
from .errors import RetrievalError

logger = logging.getLogger(__name__)

RETRY_STATUS = {429, 500, 502, 503, 504}


class RateLimiter:
    """Interval-based limiter: at most `rate_per_second` calls to wait() per second."""

    def __init__(self, rate_per_second: float, clock=time.monotonic, sleep=time.sleep):
        if rate_per_second <= 0:
            raise ValueError(f"rate_per_second must be > 0 (got {rate_per_second})")
        self.min_interval = 1.0 / rate_per_second
        self._clock = clock
        self._sleep = sleep
        self._next_slot = None
        self._lock = threading.Lock()

    def wait(self):
        # slot is reserved under the lock; the sleep happens outside it
        with self._lock:
            now = self._clock()
            slot = now if self._next_slot is None else max(now, self._next_slot)
            self._next_slot = slot + self.min_interval
        if slot > now:
            self._sleep(slot - now)


def user_agent(mailto: Optional[str]) -> str:
    contact = f" (mailto:{mailto})" if mailto else ""
    return f"citeverify/{__version__}{contact}"


class PoliteHttpClient:
    """
    requests session + rate limiter + bounded retries.

    Transport errors and 429/5xx responses are retried with exponential
    backoff (backoff, 2*backoff, ...). HTTP 404 means "absent" and returns None.
    """

    def __init__(self, service, rate_per_second, headers=None, timeout=20,
                 max_attempts=3, backoff=1.0, session=None,
                 clock=time.monotonic, sleep=time.sleep):
        self.service = service
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.session = session if session is not None else requests.Session()
        self.headers = dict(headers or {})
        self.limiter = RateLimiter(rate_per_second, clock=clock, sleep=sleep)
        self._sleep = sleep
        self._count_lock = threading.Lock()
        self.request_count = 0

    def get_json(self, url, params=None, query=None) -> Optional[Any]:
        last_error = None

        for attempt in range(1, self.max_attempts + 1):
            self.limiter.wait()
            with self._count_lock:
                self.request_count += 1

            try:
                response = self.session.get(url, params=params, headers=self.headers, timeout=self.timeout)
            except requests.exceptions.RequestException as e:
                last_error = e
                logger.warning(f"{self.service}: network error on attempt {attempt}/{self.max_attempts} for {query!r}: {e}")
            else:
                if response.status_code == 404:
                    return None
                if response.status_code in RETRY_STATUS:
                    last_error = f"HTTP {response.status_code}"
                    logger.warning(f"{self.service}: HTTP {response.status_code} on attempt {attempt}/{self.max_attempts} for {query!r}")
                else:
                    try:
                        response.raise_for_status()
                        return response.json()
                    except (requests.exceptions.RequestException, ValueError) as e:
                        raise RetrievalError(f"{self.service} returned an unusable response for {query!r}: {e}",
                                             service=self.service, query=query) from e

            if attempt < self.max_attempts:
                self._sleep(self.backoff * 2 ** (attempt - 1))

        logger.error(f"{self.service}: giving up on {query!r} after {self.max_attempts} attempts")
        raise RetrievalError(f"{self.service} request for {query!r} failed after {self.max_attempts} attempts: {last_error}",
                             service=self.service, query=query)


class ResponseCache:
    """
    One immutable JSON file per (service, query type, normalized query).

    Negative results (404 / empty search) are cached as null payloads so that
    warm reruns issue no network traffic at all.
    """

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(service, query_type, normalized_query) -> str:
        raw = f"{service}|{query_type}|{normalized_query}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def _path(self, key):
        return self.cache_dir / f"{key}.json"

    def get(self, service, query_type, normalized_query) -> Tuple[bool, Any]:
        path = self._path(self.key(service, query_type, normalized_query))
        if not path.exists():
            return False, None
        try:
            with open(path, "r", encoding="utf-8") as f:
                entry = json.load(f)
            return True, entry["payload"]
        except (OSError, ValueError, KeyError) as e:
            logger.warning(f"Ignoring unreadable cache entry {path.name}: {e}")
            return False, None

    def put(self, service, query_type, normalized_query, payload):
        key = self.key(service, query_type, normalized_query)
        path = self._path(key)
        entry = {
            "service": service,
            "query_type": query_type,
            "query": normalized_query,
            "payload": payload,
        }
        with self._lock:
            if path.exists():
                return
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as f:
                    json.dump(entry, f, ensure_ascii=False, sort_keys=True)
                os.replace(tmp, path)
            except OSError:
                if os.path.exists(tmp):
                    os.remove(tmp)
                raise
