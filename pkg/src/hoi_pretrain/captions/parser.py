"""Shallow pattern parser turning captions into <human, verb, object> triplets.

The parser walks the token stream looking for ``NP [PP]* [aux] VERB
[particle] NP`` clauses. Every clause is extracted first; the filter then
drops triplets whose subject is not a person noun or whose relation is not
headed by a known verb.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

from .lexicon import (
    ADJECTIVES,
    ADVERBS,
    AUXILIARIES,
    BOUNDARY_WORDS,
    DETERMINERS,
    PERSON_NOUNS,
    PREPOSITIONS,
    RELATION_PARTICLES,
    VERB_FORMS,
)

_TOKEN = re.compile(r"[a-z]+(?:'[a-z]+)?|[,;.!?]")
_PUNCT = frozenset(",;.!?")


@dataclass(frozen=True)
class HOITriplet:
    human: str
    verb: str
    object: str
    source_caption_id: Optional[str] = None

    def key(self) -> Tuple[str, str, str]:
        return (self.human, self.verb, self.object)


@dataclass(frozen=True)
class RawTriple:
    subject: str
    relation: str
    object: str
    relation_is_verb: bool


class CaptionParser(Protocol):
    def parse(self, caption: str, caption_id: Optional[str] = None) -> List[HOITriplet]:
        ...


def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


class ShallowCaptionParser:
    """Lexicon-driven clause matcher; see the module docstring."""

    def __init__(self, person_nouns=PERSON_NOUNS, verb_forms=VERB_FORMS):
        self.person_nouns = frozenset(person_nouns)
        self.verb_forms = dict(verb_forms)
        self.verb_lemmas = frozenset(self.verb_forms.values())

    # -- token classes -----------------------------------------------------

    def _is_verb(self, tok: str) -> bool:
        return tok in self.verb_forms

    def _is_break(self, tok: str) -> bool:
        return (tok in _PUNCT or tok in PREPOSITIONS or tok in BOUNDARY_WORDS
                or tok in AUXILIARIES or tok in ADVERBS)

    def _noun_phrase(self, toks: Sequence[str], i: int) -> Tuple[Optional[str], int]:
        """Head noun of the phrase starting at ``i`` and the index after it."""
        n = len(toks)
        saw_det = False
        head = None
        j = i
        while j < n and toks[j] in DETERMINERS and head is None:
            saw_det = True
            j += 1
        while j < n:
            tok = toks[j]
            if tok in self.person_nouns:
                head = tok
                j += 1
                continue
            if self._is_break(tok):
                break
            if self._is_verb(tok):
                # "a skateboard", "the smiling woman", "a large bat": a verb form
                # right after a determiner or adjective is nominal; elsewhere it
                # starts the predicate
                if not ((saw_det and head is None) or head in ADJECTIVES):
                    break
            head = tok
            j += 1
        return head, j

    def _predicate(self, toks, j):
        """Parse ``[aux|adv]* VERB [adv] [particle]`` into (relation, next index)."""
        n = len(toks)
        while j < n and (toks[j] in AUXILIARIES or toks[j] in ADVERBS):
            j += 1
        if j >= n or not self._is_verb(toks[j]):
            return None, j
        lemma = self.verb_forms[toks[j]]
        j += 1
        while j < n and toks[j] in ADVERBS:
            j += 1
        relation = lemma
        if j < n and toks[j] in RELATION_PARTICLES:
            relation = f"{lemma} {toks[j]}"
            j += 1
        return relation, j

    def extract(self, caption: str) -> List[RawTriple]:
        """All subject-relation-object clauses, before person/verb filtering."""
        toks = tokenize(caption)
        n = len(toks)
        found: List[RawTriple] = []
        i = 0
        while i < n:
            tok = toks[i]
            if tok in _PUNCT or tok in BOUNDARY_WORDS or tok in PREPOSITIONS or tok in AUXILIARIES:
                i += 1
                continue
            subject, j = self._noun_phrase(toks, i)
            if subject is None or j == i:
                i += 1
                continue
            subjects = [subject]
            # coordinated subjects: "a man and a woman ride ..."
            while j + 1 < n and toks[j] == "and":
                other, k = self._noun_phrase(toks, j + 1)
                if other is None or k == j + 1:
                    break
                subjects.append(other)
                j = k
            # prepositional modifiers of the subject: "a man in a red shirt rides"
            first_pp = None
            while j < n and toks[j] in PREPOSITIONS:
                head, k = self._noun_phrase(toks, j + 1)
                if k == j + 1:
                    break
                if first_pp is None and head is not None:
                    first_pp = (toks[j], head)
                j = k
            # relative clause opener: "a man who is riding ..."
            if j < n and toks[j] in ("who", "that", "which"):
                j += 1
            if self._predicate(toks, j)[0] is None:
                # "a man on the road": a non-verb relation, left for the filter
                if first_pp is not None:
                    for s in subjects:
                        found.append(RawTriple(s, first_pp[0], first_pp[1], False))
                i = max(j, i + 1)
                continue
            next_start = None
            while True:
                relation, k = self._predicate(toks, j)
                if relation is None:
                    break
                obj_start = k
                obj, k = self._noun_phrase(toks, k)
                if obj is None or k == obj_start:
                    j = k
                    break
                objects = [obj]
                if next_start is None:
                    next_start = obj_start
                # "holds a cup and a plate", unless the second phrase has its own verb
                while k + 1 < n and toks[k] == "and":
                    other, m = self._noun_phrase(toks, k + 1)
                    if other is None or m == k + 1:
                        break
                    if m < n and (self._is_verb(toks[m]) or toks[m] in AUXILIARIES):
                        break
                    objects.append(other)
                    k = m
                for s in subjects:
                    for o in objects:
                        found.append(RawTriple(s, relation, o, True))
                # "holds a cup and reads a book"
                if k + 1 < n and toks[k] == "and" and (self._is_verb(toks[k + 1])
                                                       or toks[k + 1] in AUXILIARIES):
                    j = k + 1
                    continue
                j = k
                break
            i = next_start if next_start is not None and next_start > i else max(j, i + 1)
        return found

    def parse(self, caption: str, caption_id: Optional[str] = None) -> List[HOITriplet]:
        out: List[HOITriplet] = []
        seen = set()
        for raw in self.extract(caption):
            if not raw.relation_is_verb or raw.subject not in self.person_nouns:
                continue
            if raw.relation.split()[0] not in self.verb_lemmas:
                continue
            triplet = HOITriplet(raw.subject, raw.relation, raw.object, caption_id)
            if triplet.key() in seen:
                continue
            seen.add(triplet.key())
            out.append(triplet)
        return out


_DEFAULT_PARSER = ShallowCaptionParser()


def parse_caption(caption: str, caption_id: Optional[str] = None,
                  parser: Optional[CaptionParser] = None) -> List[HOITriplet]:
    """Triplets whose subject is a person and whose relation is a verb."""
    return (parser or _DEFAULT_PARSER).parse(caption, caption_id)


def normalize_prompt(text: str) -> str:
    return " ".join(text.lower().split())


def template_prompt(triplet: HOITriplet) -> str:
    return normalize_prompt(f"a photo of {triplet.human} {triplet.verb} {triplet.object}")
