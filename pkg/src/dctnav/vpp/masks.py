"""Run-length encoded image masks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ValidationError


def rle_encode(bitmap: np.ndarray) -> np.ndarray:
    """(k, 2) array of ``(start, length)`` runs over the row-major flattened bitmap."""
    flat = np.asarray(bitmap, dtype=bool).ravel()
    padded = np.r_[False, flat, False].astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, ends = edges[0::2], edges[1::2]
    return np.c_[starts, ends - starts].astype(np.int64)


def rle_decode(runs: np.ndarray, shape) -> np.ndarray:
    flat = np.zeros(int(shape[0]) * int(shape[1]), dtype=bool)
    if len(runs):
        marks = np.zeros(flat.size + 1, dtype=np.int32)
        np.add.at(marks, runs[:, 0], 1)
        np.add.at(marks, runs[:, 0] + runs[:, 1], -1)
        flat = np.cumsum(marks[:-1]) > 0
    return flat.reshape(shape)


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary mask with its tight bounding box ``(x, y, w, h)``.

    ``obj_id`` is the detector's instance id; the movability filter refers to
    candidates by it.
    """

    runs: np.ndarray
    shape: tuple
    bbox: tuple
    caption: str = ""
    source_time: float = 0.0
    obj_id: int = -1
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_bitmap(cls, bitmap, caption="", source_time=0.0, obj_id=-1) -> "Mask":
        bitmap = np.asarray(bitmap, dtype=bool)
        if bitmap.ndim != 2:
            raise ValidationError("mask bitmap must be 2-D")
        if not bitmap.any():
            raise ValidationError("mask bitmap is empty")
        rows = np.flatnonzero(bitmap.any(axis=1))
        cols = np.flatnonzero(bitmap.any(axis=0))
        bbox = (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
        return cls(rle_encode(bitmap), tuple(bitmap.shape), bbox, caption, float(source_time),
                   int(obj_id), bitmap.copy())

    @property
    def bitmap(self) -> np.ndarray:
        if self._dense is None:
            object.__setattr__(self, "_dense", rle_decode(self.runs, self.shape))
        return self._dense

    @property
    def area(self) -> int:
        return int(self.runs[:, 1].sum())

    def with_geometry(self, other: "Mask") -> "Mask":
        """This mask's identity and caption with ``other``'s pixels."""
        return replace(other, caption=self.caption, obj_id=self.obj_id)

    def to_dict(self) -> dict:
        return {"id": self.obj_id, "caption": self.caption, "bbox": list(self.bbox)}


def iou(a: Mask, b: Mask) -> float:
    if a.shape != b.shape:
        raise ValidationError("masks come from different image sizes")
    ax, ay, aw, ah = a.bbox
    bx, by, bw, bh = b.bbox
    x0, y0 = max(ax, bx), max(ay, by)
    x1, y1 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    inter = int(np.count_nonzero(a.bitmap[y0:y1, x0:x1] & b.bitmap[y0:y1, x0:x1]))
    return inter / (a.area + b.area - inter)


def union_bitmap(masks, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        x, y, w, h = m.bbox
        out[y:y + h, x:x + w] |= m.bitmap[y:y + h, x:x + w]
    return out
