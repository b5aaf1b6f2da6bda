import logging

from .http_client import PoliteHttpClient, user_agent

logger = logging.getLogger(__name__)


class SemanticScholarClient:
    """Semantic Scholar Graph API paper search."""

    BASE_URL = "https://api.semanticscholar.org/graph/v1"
    FIELDS = "title,authors,venue,year,externalIds"

    def __init__(self, api_key=None, mailto=None, rate_per_second=1.0, timeout=20,
                 max_attempts=3, backoff=1.0, session=None, **http_kwargs):
        headers = {"User-Agent": user_agent(mailto)}
        if api_key:
            headers["x-api-key"] = api_key
        self.http = PoliteHttpClient(
            "semantic_scholar",
            rate_per_second,
            headers=headers,
            timeout=timeout,
            max_attempts=max_attempts,
            backoff=backoff,
            session=session,
            **http_kwargs,
        )

    def search_title(self, title, limit=5):
        """
        Search papers by title.

        Returns:
            list: raw paper records in relevance order (at most `limit`)
        """
        params = {"query": title, "limit": limit, "fields": self.FIELDS}
        data = self.http.get_json(f"{self.BASE_URL}/paper/search", params=params, query=title)
        if data is None:
            return []
        papers = data.get("data") or []
        logger.info(f"Semantic Scholar: {len(papers)} hits for title query {title[:60]!r}")
        return papers[:limit]

    @property
    def request_count(self):
        return self.http.request_count
