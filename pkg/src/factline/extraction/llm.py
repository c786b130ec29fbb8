from __future__ import annotations

import logging

from factline.extraction.rules import finalize_facts
from factline.llm import LLMClient, LLMError, parse_json_reply

logger = logging.getLogger(__name__)

TEMPLATE_ID = "fact_extraction"


class LLMExtractor:
    """Teacher extractor backed by a chat-completion endpoint.

    Replies must be a JSON array of strings. A reply that cannot be parsed
    even after stripping code fences raises :class:`LLMError`; batch callers
    record the sentence as unextracted.
    """

    kind = "llm"

    def __init__(self, client: LLMClient):
        self.client = client

    def _parse(self, reply: str) -> list[str]:
        facts = parse_json_reply(reply)
        if not isinstance(facts, list) or not all(isinstance(f, str) for f in facts):
            raise LLMError("reply is not a JSON array of strings", retryable=False, raw=reply)
        return finalize_facts(facts)

    def extract(self, text: str) -> list[str]:
        if not text.strip():
            return []
        return self._parse(self.client.complete(TEMPLATE_ID, text, operation_id="extract"))

    def extract_many(self, texts: list[str]) -> tuple[list[list[str] | None], list[int]]:
        """Extract a batch; returns per-text facts (None when unextracted) and failed indices."""
        todo = [t for t in texts if t.strip()]
        replies = dict(zip(todo, self.client.complete_many(TEMPLATE_ID, todo, operation_id="extract")))
        out: list[list[str] | None] = []
        failed = []
        for i, text in enumerate(texts):
            if not text.strip():
                out.append([])
                continue
            try:
                out.append(self._parse(replies[text]))
            except LLMError as exc:
                logger.warning("sentence %d left unextracted: %s", i, exc)
                out.append(None)
                failed.append(i)
        return out, failed
