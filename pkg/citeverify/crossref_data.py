import logging
from urllib.parse import quote

from .http_client import PoliteHttpClient, user_agent

logger = logging.getLogger(__name__)


class CrossrefClient:
    """
    Crossref REST works API.

    Returns raw work records ("message" objects); normalization happens in
    indexclient.normalize_record.
    """

    BASE_URL = "https://api.crossref.org"

    def __init__(self, mailto=None, rate_per_second=5.0, timeout=20, max_attempts=3,
                 backoff=1.0, session=None, **http_kwargs):
        self.mailto = mailto
        headers = {
            "User-Agent": user_agent(mailto),
            "Accept": "application/json",
        }
        self.http = PoliteHttpClient(
            "crossref",
            rate_per_second,
            headers=headers,
            timeout=timeout,
            max_attempts=max_attempts,
            backoff=backoff,
            session=session,
            **http_kwargs,
        )

    def _params(self, **params):
        if self.mailto:
            params["mailto"] = self.mailto
        return params

    def get_work(self, doi):
        """
        Fetch one work by DOI.

        Returns:
            dict or None: the work record, None when Crossref answers 404
        """
        url = f"{self.BASE_URL}/works/{quote(doi, safe='/')}"
        data = self.http.get_json(url, params=self._params(), query=doi)
        if data is None:
            logger.info(f"Crossref: DOI {doi} not found")
            return None
        return data.get("message")

    def search_title(self, title, rows=5):
        url = f"{self.BASE_URL}/works"
        data = self.http.get_json(url, params=self._params(**{"query.title": title, "rows": rows}), query=title)
        if data is None:
            return []
        items = (data.get("message") or {}).get("items") or []
        logger.info(f"Crossref: {len(items)} hits for title query {title[:60]!r}")
        return items[:rows]

    @property
    def request_count(self):
        return self.http.request_count
