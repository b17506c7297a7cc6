"""Ensemble prediction traces: canonical in-memory model, binary file format,
and ingestion of externally produced per-record traces (JSONL / CSV)."""

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError, TraceFormatError

MAGIC = b"DGNT"
VERSION = 1

_FLAG_LOGITS = 0x1
_FLAG_LABELS = 0x2


@dataclass
class EnsembleTrace:
    """Per-epoch x per-model x per-example prediction record.

    ``correctness`` is derived from ``predicted`` and ``labels`` and is only
    available when labels are attached.  ``epoch_set`` is the subset of epochs
    that cumulative scores integrate over (defaults to all epochs).
    """

    predicted: np.ndarray               # (E, N, M) int32
    num_classes: int
    labels: np.ndarray | None = None    # (M,) int64
    logits: np.ndarray | None = None    # (E, N, M, C) float64
    epoch_set: list[int] | None = None
    seed_lineage: str = ""
    correctness: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.int32)
        if self.predicted.ndim != 3:
            raise ValueError("predicted must have shape (E, N, M)")
        if self.logits is not None:
            self.logits = np.asarray(self.logits, dtype=np.float64)
            expected = self.predicted.shape + (self.num_classes,)
            if self.logits.shape != expected:
                raise ValueError(f"logits must have shape {expected}")
            if not np.array_equal(self.logits.argmax(axis=-1), self.predicted):
                raise ValueError("predicted must equal argmax of logits")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.num_examples,):
                raise ValueError("labels length must equal number of examples")
            derived = (self.predicted == self.labels[None, None, :]).astype(np.uint8)
            if self.correctness is not None and not np.array_equal(
                np.asarray(self.correctness, dtype=np.uint8), derived
            ):
                raise TraceFormatError("stored correctness disagrees with labels")
            self.correctness = derived
        if self.epoch_set is None:
            self.epoch_set = list(range(self.num_epochs))
        else:
            self.epoch_set = [int(e) for e in self.epoch_set]
            if any(e < 0 or e >= self.num_epochs for e in self.epoch_set):
                raise ValueError("epoch_set out of range")

    @property
    def num_epochs(self) -> int:
        return self.predicted.shape[0]

    @property
    def num_models(self) -> int:
        return self.predicted.shape[1]

    @property
    def num_examples(self) -> int:
        return self.predicted.shape[2]

    def with_epoch_set(self, epoch_set) -> "EnsembleTrace":
        return EnsembleTrace(
            predicted=self.predicted,
            num_classes=self.num_classes,
            labels=self.labels,
            logits=self.logits,
            epoch_set=list(epoch_set),
            seed_lineage=self.seed_lineage,
        )


def _write_tensor(fh, arr: np.ndarray) -> None:
    raw = np.ascontiguousarray(arr).tobytes()
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", zlib.crc32(raw)))


def _read_tensor(fh, dtype, shape) -> np.ndarray:
    head = fh.read(8)
    if len(head) != 8:
        raise TraceFormatError("truncated trace file (tensor header)")
    (nbytes,) = struct.unpack("<Q", head)
    raw = fh.read(nbytes)
    if len(raw) != nbytes:
        raise TraceFormatError("truncated trace file (tensor body)")
    tail = fh.read(4)
    if len(tail) != 4:
        raise TraceFormatError("truncated trace file (checksum)")
    (crc,) = struct.unpack("<I", tail)
    if crc != zlib.crc32(raw):
        raise TraceFormatError("checksum failure")
    arr = np.frombuffer(raw, dtype=dtype)
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise TraceFormatError("shape mismatch in trace tensor")
    return arr.reshape(shape).copy()


def save_trace(trace: EnsembleTrace, path) -> None:
    """Serialize a trace; little-endian layout with a CRC32 per tensor."""
    flags = 0
    if trace.logits is not None:
        flags |= _FLAG_LOGITS
    if trace.labels is not None:
        flags |= _FLAG_LABELS
    lineage = trace.seed_lineage.encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(
            struct.pack(
                "<IIIIH",
                trace.num_epochs,
                trace.num_models,
                trace.num_examples,
                trace.num_classes,
                flags,
            )
        )
        fh.write(struct.pack("<I", len(trace.epoch_set)))
        fh.write(struct.pack(f"<{len(trace.epoch_set)}I", *trace.epoch_set))
        fh.write(struct.pack("<H", len(lineage)))
        fh.write(lineage)
        _write_tensor(fh, trace.predicted)
        if trace.labels is not None:
            _write_tensor(fh, trace.labels)
        if trace.logits is not None:
            _write_tensor(fh, trace.logits)


def load_trace(path) -> EnsembleTrace:
    """Load a trace written by save_trace; round-trip is bit-exact."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise TraceFormatError("not a trace file (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise TraceFormatError(f"unsupported trace version {version}")
        e, n, m, c, flags = struct.unpack("<IIIIH", fh.read(18))
        (n_eps,) = struct.unpack("<I", fh.read(4))
        epoch_set = list(struct.unpack(f"<{n_eps}I", fh.read(4 * n_eps)))
        (n_lin,) = struct.unpack("<H", fh.read(2))
        lineage = fh.read(n_lin).decode()
        predicted = _read_tensor(fh, np.int32, (e, n, m))
        labels = _read_tensor(fh, np.int64, (m,)) if flags & _FLAG_LABELS else None
        logits = (
            _read_tensor(fh, np.float64, (e, n, m, c)) if flags & _FLAG_LOGITS else None
        )
    return EnsembleTrace(
        predicted=predicted,
        num_classes=c,
        labels=labels,
        logits=logits,
        epoch_set=epoch_set,
        seed_lineage=lineage,
    )


def _iter_jsonl(path):
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"line {line_no}: invalid JSON ({exc})") from None
            yield line_no, rec


def _iter_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError("empty record file")
        logit_cols = sorted(
            (f for f in reader.fieldnames if f.startswith("logit_")),
            key=lambda f: int(f.split("_", 1)[1]),
        )
        for line_no, row in enumerate(reader, start=2):
            rec = {
                "epoch": row["epoch"],
                "model": row["model"],
                "example": row["example"],
                "pred": row["pred"],
            }
            if logit_cols:
                rec["logits"] = [float(row[c]) for c in logit_cols]
            yield line_no, rec


def ingest_external(path, format: str, labels=None) -> EnsembleTrace:
    """Assemble a dense trace from per-cell records produced by any trainer.

    Each record carries (epoch, model, example, pred[, logits]).  Missing
    cells, duplicates, out-of-range indices and ragged logits are rejected;
    record order is irrelevant.
    """
    if format == "jsonl":
        records = list(_iter_jsonl(path))
    elif format == "csv":
        records = list(_iter_csv(path))
    else:
        raise ValueError(f"unknown ingestion format {format!r}")
    if not records:
        raise IngestionError("no records")

    cells = {}
    logit_len = None
    for line_no, rec in records:
        try:
            key = (int(rec["epoch"]), int(rec["model"]), int(rec["example"]))
            pred = int(rec["pred"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"line {line_no}: bad record ({exc})") from None
        if min(key) < 0 or pred < 0:
            raise IngestionError(f"line {line_no}: negative index")
        if key in cells:
            raise IngestionError(f"line {line_no}: duplicate cell {key}")
        logits = rec.get("logits")
        if logits is not None:
            logits = [float(v) for v in logits]
        if logit_len is None and logits is not None and len(cells) == 0:
            logit_len = len(logits)
        if (logits is None) != (logit_len is None) or (
            logits is not None and len(logits) != logit_len
        ):
            raise IngestionError(f"line {line_no}: ragged or inconsistent logits")
        cells[key] = (pred, logits)

    epochs = 1 + max(k[0] for k in cells)
    models = 1 + max(k[1] for k in cells)
    examples = 1 + max(k[2] for k in cells)
    missing = [
        (e, i, m)
        for e in range(epochs)
        for i in range(models)
        for m in range(examples)
        if (e, i, m) not in cells
    ]
    if missing:
        shown = ", ".join(str(g) for g in missing[:10])
        raise IngestionError(f"{len(missing)} missing cells; first gaps: {shown}")

    preds = np.zeros((epochs, models, examples), dtype=np.int32)
    logits_arr = None
    if logit_len is not None:
        logits_arr = np.zeros((epochs, models, examples, logit_len))
    for (e, i, m), (pred, logits) in cells.items():
        preds[e, i, m] = pred
        if logits_arr is not None:
            logits_arr[e, i, m] = logits
    num_classes = int(logit_len) if logit_len is not None else int(preds.max()) + 1
    if labels is not None:
        num_classes = max(num_classes, int(np.max(labels)) + 1)
    if preds.max() >= num_classes:
        raise IngestionError("predicted label out of range")
    if logits_arr is not None and not np.array_equal(
        logits_arr.argmax(axis=-1), preds
    ):
        raise IngestionError("pred field disagrees with logits argmax")
    return EnsembleTrace(
        predicted=preds,
        num_classes=num_classes,
        labels=labels,
        logits=logits_arr,
    )
