"""JSON dataset readers and writers."""
from __future__ import annotations

import json
import os
from functools import lru_cache
from importlib import resources
from typing import List, Sequence, Union

import jsonschema

from ..errors import LoadError, UsageError
from .examples import NLI_LABELS, MCQAExample, PairExample

PathLike = Union[str, os.PathLike]


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """Bundled JSON schema, ``name`` in {"mcqa", "pair", "plan"}."""
    text = resources.files("mmmqa.data").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def _read_records(path: PathLike, schema: str) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
    except FileNotFoundError:
        raise LoadError(f"{path}: no such file") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LoadError(f"{path}: malformed JSON ({exc})") from None
    validator = jsonschema.Draft202012Validator(load_schema(schema))
    error = next(iter(sorted(validator.iter_errors(records), key=lambda e: list(e.path))), None)
    if error is not None:
        where = f"record {error.path[0]}" if error.path else "top level"
        raise LoadError(f"{path}: {where}: {error.message}")
    return records


def load_mcqa_json(path: PathLike) -> List[MCQAExample]:
    records = _read_records(path, "mcqa")
    out = []
    for i, rec in enumerate(records):
        try:
            out.append(MCQAExample(id=rec["id"], passage=list(rec["passage"]), question=rec["question"],
                                   options=list(rec["options"]), label=rec.get("label")))
        except UsageError as exc:
            raise LoadError(f"{path}: record {i}: {exc}") from None
    return out


def load_pair_json(path: PathLike) -> List[PairExample]:
    records = _read_records(path, "pair")
    labels = {name: i for i, name in enumerate(NLI_LABELS)}
    return [PairExample(premise=r["premise"], hypothesis=r["hypothesis"], label=labels.get(r["label"], r["label"]),
                        id=r.get("id", str(i))) for i, r in enumerate(records)]


def save_json(records: Sequence[Union[MCQAExample, PairExample]], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in records], fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def load_dataset(path: PathLike, kind: str):
    if kind == "mcqa":
        return load_mcqa_json(path)
    if kind == "pair":
        return load_pair_json(path)
    raise UsageError(f"unknown dataset kind {kind!r}")
