"""Conversation corpora: JSONL loading, EPC/ERC windowing, speaker-tagged rendering."""
from __future__ import annotations

import hashlib
import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from emocues.errors import ParseError, ValidationError

_SPLIT_RE = re.compile(r"[\s" + re.escape(string.punctuation) + r"]+")
_SPEAKER_RE = re.compile(r"^\[s(\d+)\]$")


@dataclass(frozen=True)
class Utterance:
    speaker: int
    text: str
    emotion: int
    audio: Path | None = None
    speaker_name: str = ""

    def __post_init__(self):
        if self.speaker < 0:
            raise ValidationError(f"speaker ordinal must be >= 0, got {self.speaker}")
        if not self.text.strip():
            raise ValidationError("utterance text is empty")


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.utterances:
            raise ValidationError(f"conversation {self.id!r} has no utterances")
        for u in self.utterances:
            if not 0 <= u.emotion < len(self.labels):
                raise ValidationError(
                    f"conversation {self.id!r}: emotion index {u.emotion} outside label set")

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass(frozen=True)
class EpcInstance:
    """History of up to ``history_window`` turns and the emotion of the turn that follows."""
    conv_id: str
    history: tuple[Utterance, ...]
    target_index: int
    target_speaker: int
    target_label: int
    history_window: int

    @property
    def instance_id(self) -> str:
        return f"{self.conv_id}:{self.target_index}"


@dataclass(frozen=True)
class ErcInstance:
    """Context ending at the utterance whose emotion is to be recognised."""
    conv_id: str
    context: tuple[Utterance, ...]
    target_index: int
    utterance_index: int
    target_label: int

    @property
    def instance_id(self) -> str:
        return f"{self.conv_id}:{self.utterance_index}"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and ASCII punctuation, drop the punctuation."""
    return [t for t in _SPLIT_RE.split(text.lower()) if t]


def speaker_token(ordinal: int) -> str:
    return f"[s{ordinal}]"


def is_speaker_token(token: str) -> bool:
    return _SPEAKER_RE.match(token) is not None


def load_conversations(path: str | Path, labels: Sequence[str] | None = None) -> list[Conversation]:
    """Read a conversation JSONL file.

    ``labels`` declares the label set; when omitted each line's own
    ``"labels"`` field is used.  Relative audio paths resolve against the
    file's directory.
    """
    path = Path(path)
    base = path.parent
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", path, lineno) from None
            try:
                out.append(_parse_conversation(obj, labels, base))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            except (KeyError, TypeError) as exc:
                raise ParseError(f"bad conversation object ({exc!r})", path, lineno) from None
    return out


def _parse_conversation(obj: dict, labels: Sequence[str] | None, base: Path) -> Conversation:
    label_set = tuple(labels) if labels is not None else tuple(obj["labels"])
    if not label_set:
        raise ValidationError("empty label set")
    index = {name: i for i, name in enumerate(label_set)}
    speakers: dict[str, int] = {}
    utts = []
    for raw in obj["utterances"]:
        name = str(raw["speaker"])
        emotion = raw["emotion"]
        if emotion not in index:
            raise ValidationError(f"unknown emotion label {emotion!r} (label set {list(label_set)})")
        audio = raw.get("audio")
        if audio is not None:
            audio = Path(audio)
            if not audio.is_absolute():
                audio = base / audio
        ordinal = speakers.setdefault(name, len(speakers))
        utts.append(Utterance(ordinal, str(raw["text"]), index[emotion], audio, name))
    return Conversation(str(obj["id"]), tuple(utts), label_set)


def dump_conversations(path: str | Path, convs: Iterable[Conversation]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for c in convs:
            utts = []
            for u in c.utterances:
                audio = None
                if u.audio is not None:
                    try:
                        audio = str(u.audio.relative_to(path.parent))
                    except ValueError:
                        audio = str(u.audio)
                utts.append({"speaker": u.speaker_name or f"spk{u.speaker}", "text": u.text,
                             "emotion": c.labels[u.emotion], "audio": audio})
            fh.write(json.dumps({"id": c.id, "labels": list(c.labels), "utterances": utts}) + "\n")


def build_epc_instances(conv: Conversation, window: int = 3) -> list[EpcInstance]:
    if window < 1:
        raise ValueError("window must be >= 1")
    utts = conv.utterances
    return [
        EpcInstance(conv.id, utts[max(0, k - window):k], k, utts[k].speaker,
                    utts[k].emotion, window)
        for k in range(1, len(utts))
    ]


def build_erc_instances(conv: Conversation, window: int = 3) -> list[ErcInstance]:
    if window < 1:
        raise ValueError("window must be >= 1")
    utts = conv.utterances
    out = []
    for i in range(len(utts)):
        start = max(0, i - window + 1)
        out.append(ErcInstance(conv.id, utts[start:i + 1], i - start, i, utts[i].emotion))
    return out


def speaker_ordinals(utts: Sequence[Utterance]) -> dict[int, int]:
    """Map conversation speaker ids to 1-based order of first appearance in ``utts``."""
    order: dict[int, int] = {}
    for u in utts:
        order.setdefault(u.speaker, len(order) + 1)
    return order


def render_speaker_sequence(utts: Sequence[Utterance], next_speaker: int | None = None) -> list[str]:
    """Interleave ``[sK]`` speaker tokens with each utterance's word tokens.

    ``next_speaker`` appends one more speaker token, used to tell an EPC model
    whose upcoming emotion is asked for.
    """
    if not utts:
        raise ValueError("cannot render an empty utterance sequence")
    order = speaker_ordinals(utts)
    tokens = []
    for u in utts:
        tokens.append(speaker_token(order[u.speaker]))
        tokens.extend(tokenize(u.text))
    if next_speaker is not None:
        tokens.append(speaker_token(order.get(next_speaker, len(order) + 1)))
    return tokens


def split_conversations(convs: Sequence[Conversation], seed: int = 0,
                        fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
                        ) -> dict[str, list[Conversation]]:
    """Deterministic train/dev/test split keyed on a hash of the conversation id."""
    cut1 = fractions[0]
    cut2 = fractions[0] + fractions[1]
    parts: dict[str, list[Conversation]] = {"train": [], "dev": [], "test": []}
    for c in convs:
        digest = hashlib.sha256(f"{seed}:{c.id}".encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2 ** 64
        parts["train" if u < cut1 else "dev" if u < cut2 else "test"].append(c)
    return parts
