"""Detection ingestion and region evidence: fixtures, remote detector client, attention maps."""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import IO, Iterable

from .errors import DataFormatError, DetectorTransportError

DEFAULT_EVIDENCE_K = 3


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    box: tuple[float, float, float, float]  # (x1, y1, x2, y2), normalized to [0, 1]

    @property
    def area(self) -> float:
        x1, y1, x2, y2 = self.box
        return (x2 - x1) * (y2 - y1)


@dataclass(frozen=True)
class AttentionMap:
    rows: int
    cols: int
    weights: tuple[tuple[float, ...], ...]

    def total(self) -> float:
        return sum(sum(row) for row in self.weights)


def _validate_detection(obj: dict, index: int) -> Detection:
    label = obj.get("label")
    if not isinstance(label, str) or not label:
        raise DataFormatError(f"non-empty text 'label' required at index {index}")
    confidence = obj.get("confidence")
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        raise DataFormatError(f"numeric 'confidence' required at index {index}")
    if not 0.0 <= confidence <= 1.0:
        raise DataFormatError(f"confidence out of range [0,1] at index {index}")
    box = obj.get("box")
    if (
        not isinstance(box, (list, tuple))
        or len(box) != 4
        or any(not isinstance(v, (int, float)) or isinstance(v, bool) for v in box)
    ):
        raise DataFormatError(f"'box' must be four numbers at index {index}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (0.0 <= x1 and x2 <= 1.0):
        raise DataFormatError(f"box x coordinates outside [0,1] at index {index}")
    if not (0.0 <= y1 and y2 <= 1.0):
        raise DataFormatError(f"box y coordinates outside [0,1] at index {index}")
    if not x1 < x2:
        raise DataFormatError(f"x1 < x2 violated at index {index}")
    if not y1 < y2:
        raise DataFormatError(f"y1 < y2 violated at index {index}")
    return Detection(label=label, confidence=float(confidence), box=(x1, y1, x2, y2))


def _iter_records(source: IO[str] | Iterable[str]):
    for line_no, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"line {line_no}: malformed record: {exc}") from exc
        if not isinstance(obj, dict):
            raise DataFormatError(f"line {line_no}: malformed record: not an object")
        yield obj


def load_detections(source: IO[str] | Iterable[str]) -> list[Detection]:
    """Parse and validate line-delimited detection records, preserving source order."""
    detections = []
    for index, obj in enumerate(_iter_records(source)):
        detections.append(_validate_detection(obj, index))
    return detections


def load_detection_fixture(path) -> dict[str, list[Detection]]:
    """Group a fixture file's detections by their image_id."""
    by_image: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for index, obj in enumerate(_iter_records(f)):
            image_id = obj.get("image_id")
            if not isinstance(image_id, str) or not image_id:
                raise DataFormatError(f"non-empty text 'image_id' required at index {index}")
            by_image.setdefault(image_id, []).append(_validate_detection(obj, index))
    return by_image


def top_regions(detections: list[Detection], k: int) -> list[Detection]:
    """Up to k detections by confidence desc; ties by larger area, then label ascending."""
    ranked = sorted(detections, key=lambda d: (-d.confidence, -d.area, d.label))
    return ranked[:k]


def attention_from_detections(
    detections: list[Detection], rows: int, cols: int
) -> AttentionMap:
    """Confidence-weighted box coverage on a rows x cols grid, normalized to sum 1.

    Each detection spreads mass equal to its confidence over the cells its box
    overlaps, proportionally to the overlap fraction. An all-zero map is returned
    only when there are no detections.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    grid = [[0.0] * cols for _ in range(rows)]
    for det in detections:
        x1, y1, x2, y2 = det.box
        area = det.area
        for r in range(rows):
            cy1, cy2 = r / rows, (r + 1) / rows
            oy = min(y2, cy2) - max(y1, cy1)
            if oy <= 0:
                continue
            for c in range(cols):
                cx1, cx2 = c / cols, (c + 1) / cols
                ox = min(x2, cx2) - max(x1, cx1)
                if ox <= 0:
                    continue
                grid[r][c] += det.confidence * (ox * oy) / area
    total = sum(sum(row) for row in grid)
    if total > 0:
        grid = [[w / total for w in row] for row in grid]
    return AttentionMap(rows=rows, cols=cols, weights=tuple(tuple(row) for row in grid))


def parse_detection_payload(body: str) -> list[Detection]:
    """Validate a detector response body: a JSON array of records or JSON lines."""
    text = body.strip()
    if text.startswith("["):
        try:
            items = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"malformed detector response: {exc}") from exc
        if not isinstance(items, list) or any(not isinstance(o, dict) for o in items):
            raise DataFormatError("detector response must be a list of records")
        return [_validate_detection(obj, i) for i, obj in enumerate(items)]
    return load_detections(text.splitlines())


def fetch_detections(image_ref: str, endpoint: str, timeout: float = 10.0) -> list[Detection]:
    """Ask a remote detector service for the detections of one image.

    Transport failures and non-success statuses raise DetectorTransportError;
    invalid response bodies raise DataFormatError. No partial lists are returned.
    """
    payload = json.dumps({"image_id": image_ref}).encode("utf-8")
    request = urllib.request.Request(
        endpoint, data=payload, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            body = response.read().decode("utf-8")
    except urllib.error.HTTPError as exc:
        raise DetectorTransportError(
            f"detector at {endpoint} returned status {exc.code}"
        ) from exc
    except (urllib.error.URLError, OSError) as exc:
        raise DetectorTransportError(f"detector at {endpoint} unreachable: {exc}") from exc
    return parse_detection_payload(body)
