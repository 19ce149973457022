"""
File formats of the lab.

- Dataset: JSON-lines. Line 1 is a header {"schema_version", "config"}; every
  further line is one example with fields example_id, grid, question,
  answer, gt_attention, noisy.
- Checkpoint: one JSON object with the architecture and every parameter as
  a shape plus row-major values. Keys are sorted so identical parameters
  give identical bytes.
- History: JSON-lines, one step report per line.
"""

import json
import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from models.data_models import Dataset, DatasetConfig, Example, ModelConfig, ModelParams, StepReport
from models.errors import DatasetFormatError, ShapeError, ValidationError
from services.attention_model import validate_params

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CHECKPOINT_FORMAT = "ucam-checkpoint"
CHECKPOINT_VERSION = 1
EXAMPLE_FIELDS = ("example_id", "grid", "question", "answer", "gt_attention", "noisy")

PathLike = Union[str, Path]


def _ensure_parent(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)


def write_json(payload, path: PathLike):
    """Write ``payload`` with sorted keys and a trailing newline."""
    path = Path(path)
    _ensure_parent(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path: PathLike):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e


# ----------------------------------------------------------------------------
# Datasets
# ----------------------------------------------------------------------------

def _example_record(example: Example) -> Dict:
    return {
        "example_id": example.example_id,
        "grid": example.grid.tolist(),
        "question": [int(t) for t in example.question],
        "answer": int(example.answer),
        "gt_attention": example.gt_attention.tolist(),
        "noisy": bool(example.noisy),
    }


def save_dataset(dataset: Dataset, path: PathLike):
    """Write a dataset as JSON-lines with the schema header on line 1."""
    path = Path(path)
    _ensure_parent(path)
    header = {"schema_version": SCHEMA_VERSION, "config": asdict(dataset.config)}
    with path.open("w", encoding="utf-8") as handle:
        handle.write(json.dumps(header, sort_keys=True) + "\n")
        for example in dataset:
            handle.write(json.dumps(_example_record(example), sort_keys=True) + "\n")
    logger.debug("Wrote %d examples to %s", len(dataset), path)


def _parse_header(text: str) -> DatasetConfig:
    try:
        header = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"malformed header ({e.msg})", line=1) from e
    if not isinstance(header, dict) or "schema_version" not in header:
        raise DatasetFormatError("missing schema_version header", line=1, field="schema_version")
    if header["schema_version"] != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"unsupported schema version {header['schema_version']} (expected {SCHEMA_VERSION})",
            line=1, field="schema_version",
        )
    known = {f.name for f in fields(DatasetConfig)}
    config_record = header.get("config", {})
    unknown = set(config_record) - known
    if unknown:
        raise DatasetFormatError(f"unknown config keys {sorted(unknown)}", line=1, field="config")
    return DatasetConfig(**config_record)


def _is_integer(value) -> bool:
    # JSON true/false load as bool, a subclass of int
    return isinstance(value, int) and not isinstance(value, bool)


def _parse_example(record, line: int, config: DatasetConfig) -> Example:
    if not isinstance(record, dict):
        raise DatasetFormatError("record is not a JSON object", line=line)
    for name in EXAMPLE_FIELDS:
        if name not in record:
            raise DatasetFormatError("missing field", line=line, field=name)

    try:
        grid = np.asarray(record["grid"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DatasetFormatError("grid is not a numeric array", line=line, field="grid") from e
    expected = (config.grid_rows, config.grid_cols, config.feature_width)
    if grid.shape != expected or not np.all(np.isfinite(grid)):
        raise DatasetFormatError(f"grid must be finite with shape {expected}", line=line, field="grid")

    question = record["question"]
    if not isinstance(question, list) or not question or not all(_is_integer(t) for t in question):
        raise DatasetFormatError("question must be a nonempty list of token ids", line=line, field="question")
    if any(t < 0 or t >= config.vocab_size for t in question):
        raise DatasetFormatError(f"token ids must lie in [0, {config.vocab_size})", line=line, field="question")

    answer = record["answer"]
    if not _is_integer(answer) or not 0 <= answer < config.num_classes:
        raise DatasetFormatError(f"answer must be a class id in [0, {config.num_classes})", line=line, field="answer")

    try:
        attention = np.asarray(record["gt_attention"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DatasetFormatError("gt_attention is not a numeric array", line=line, field="gt_attention") from e
    if attention.shape != expected[:2]:
        raise DatasetFormatError(f"gt_attention must have shape {expected[:2]}", line=line, field="gt_attention")
    if np.any(attention < 0) or abs(attention.sum() - 1.0) > 1e-9:
        raise DatasetFormatError(
            f"gt_attention must be nonnegative and sum to 1 (sums to {attention.sum():.9f})",
            line=line, field="gt_attention",
        )

    if not isinstance(record["noisy"], bool):
        raise DatasetFormatError("noisy must be true or false", line=line, field="noisy")
    return Example(
        example_id=str(record["example_id"]),
        grid=grid,
        question=list(question),
        answer=answer,
        gt_attention=attention,
        noisy=record["noisy"],
    )


def load_dataset(path: PathLike) -> Dataset:
    """Read and validate a JSON-lines dataset."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"dataset file not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if not lines or not lines[0].strip():
        raise DatasetFormatError("file is empty", line=1)
    config = _parse_header(lines[0])
    examples = []
    seen = set()
    for number, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"malformed JSON ({e.msg})", line=number) from e
        example = _parse_example(record, number, config)
        if example.example_id in seen:
            raise DatasetFormatError(f"duplicate example id '{example.example_id}'", line=number, field="example_id")
        seen.add(example.example_id)
        examples.append(example)
    return Dataset(config=config, examples=examples)


# ----------------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, model_config: ModelConfig, path: PathLike, meta: Optional[Dict] = None):
    """Write parameters and architecture as sorted-key JSON."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": asdict(model_config),
        "params": {
            key: {"shape": list(value.shape), "values": value.reshape(-1).tolist()}
            for key, value in params.flat().items()
        },
        "meta": meta or {},
    }
    path = Path(path)
    _ensure_parent(path)
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: PathLike, expected: Optional[ModelConfig] = None) -> Tuple[ModelParams, ModelConfig, Dict]:
    """
    Read a checkpoint and validate every parameter shape.

    Args:
        path: Checkpoint file
        expected: Architecture the caller will run with; a mismatch is a ShapeError

    Returns:
        Tuple of (params, architecture, meta)
    """
    payload = read_json(path)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path} is not a checkpoint file")
    model_config = ModelConfig(**payload["model"])
    if expected is not None and asdict(expected) != asdict(model_config):
        differences = [
            f"{name} {getattr(model_config, name)} vs {getattr(expected, name)}"
            for name in asdict(model_config)
            if getattr(model_config, name) != getattr(expected, name)
        ]
        raise ShapeError(f"checkpoint architecture disagrees with the configuration: {', '.join(differences)}")
    flat = {}
    for key, entry in payload["params"].items():
        values = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise ShapeError(f"parameter {key}: {values.size} values do not fill shape {shape}")
        flat[key] = values.reshape(shape)
    params = ModelParams.from_flat(flat)
    validate_params(params, model_config)
    return params, model_config, payload.get("meta", {})


# ----------------------------------------------------------------------------
# History
# ----------------------------------------------------------------------------

def write_history(history: Iterable[StepReport], path: PathLike):
    path = Path(path)
    _ensure_parent(path)
    with path.open("w", encoding="utf-8") as handle:
        for report in history:
            handle.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")


def read_history(path: PathLike) -> List[Dict]:
    path = Path(path)
    records = []
    for number, text in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if text.strip():
            try:
                records.append(json.loads(text))
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}: line {number} is not valid JSON") from e
    return records


def check_dataset_compatible(dataset: Dataset, model_config: ModelConfig):
    """Raise ShapeError when a dataset was generated for a different architecture."""
    names = ("grid_rows", "grid_cols", "feature_width", "vocab_size", "num_classes")
    differences = [
        f"{name} {getattr(dataset.config, name)} vs {getattr(model_config, name)}"
        for name in names
        if getattr(dataset.config, name) != getattr(model_config, name)
    ]
    if differences:
        raise ShapeError(f"dataset does not match the model configuration: {', '.join(differences)}")
