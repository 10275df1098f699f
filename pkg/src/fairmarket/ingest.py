"""Aggregate 15-minute household readings to the hourly CSV used as empirical profiles.

Input columns (renameable via ``column_map``): ``timestamp, household, load_kwh,
pv_kwh``. Each household's readings must be in time order, start on the hour and
come in complete blocks of four. Sums are done in decimal arithmetic so hourly
totals equal the raw totals exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import ConfigError

COLUMNS = ("timestamp", "household", "load_kwh", "pv_kwh")
STEP = timedelta(minutes=15)
PER_HOUR = 4


class IngestError(ConfigError):
    """Malformed raw data; the message names the first offending row."""


@dataclass
class _Block:
    start: datetime
    load: Decimal
    pv: Decimal
    n: int
    last_row: int


def _parse_time(text: str, row: int) -> datetime:
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(t)
    except ValueError:
        raise IngestError(f"row {row}: unparseable timestamp {text!r}") from None


def _parse_energy(text: str, row: int, name: str) -> Decimal:
    try:
        v = Decimal(text.strip())
    except InvalidOperation:
        raise IngestError(f"row {row}: {name} is not a number: {text!r}") from None
    if not v.is_finite():
        raise IngestError(f"row {row}: {name} is not finite")
    if v < 0:
        raise IngestError(f"row {row}: negative {name} {text}")
    return v


def aggregate(raw_path, column_map: dict[str, str] | None = None) -> list[dict]:
    """Return hourly rows ``{household, timestamp, load_kwh, pv_kwh}`` (values as Decimal).

    Row numbers in error messages count the header as row 1.
    """
    names = {c: (column_map or {}).get(c, c) for c in COLUMNS}
    out: list[dict] = []
    open_blocks: dict[str, _Block] = {}
    last_seen: dict[str, datetime] = {}
    with open(Path(raw_path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [src for src in names.values() if src not in (reader.fieldnames or ())]
        if missing:
            raise IngestError(f"row 1: missing column(s) {missing}")
        for row_no, rec in enumerate(reader, start=2):
            hh = rec[names["household"]].strip()
            if not hh:
                raise IngestError(f"row {row_no}: empty household id")
            ts = _parse_time(rec[names["timestamp"]], row_no)
            load = _parse_energy(rec[names["load_kwh"]], row_no, "load_kwh")
            pv = _parse_energy(rec[names["pv_kwh"]], row_no, "pv_kwh")
            prev = last_seen.get(hh)
            if prev is None:
                if ts.minute != 0 or ts.second != 0 or ts.microsecond != 0:
                    raise IngestError(f"row {row_no}: household {hh} does not start on the hour ({ts})")
            elif ts <= prev:
                raise IngestError(f"row {row_no}: unsorted timestamp {ts} for household {hh} (after {prev})")
            elif ts - prev != STEP:
                raise IngestError(f"row {row_no}: gap for household {hh}: expected {prev + STEP}, got {ts}")
            last_seen[hh] = ts
            block = open_blocks.get(hh)
            if block is None:
                block = open_blocks[hh] = _Block(ts, Decimal(0), Decimal(0), 0, row_no)
            block.load += load
            block.pv += pv
            block.n += 1
            block.last_row = row_no
            if block.n == PER_HOUR:
                out.append({"household": hh, "timestamp": block.start.isoformat(),
                            "load_kwh": block.load, "pv_kwh": block.pv})
                del open_blocks[hh]
    if open_blocks:
        hh, block = min(open_blocks.items(), key=lambda kv: kv[1].last_row)
        raise IngestError(f"row {block.last_row}: incomplete final hour for household {hh} "
                          f"({block.n} of {PER_HOUR} readings from {block.start})")
    if not out:
        raise IngestError("row 2: no complete hourly readings")
    out.sort(key=lambda r: (r["household"], r["timestamp"]))
    return out


def write_hourly(rows: list[dict], out_path) -> None:
    with open(Path(out_path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["household", "timestamp", "load_kwh", "pv_kwh"])
        for r in rows:
            w.writerow([r["household"], r["timestamp"], str(r["load_kwh"]), str(r["pv_kwh"])])


def ingest(raw_path, out_path, column_map: dict[str, str] | None = None) -> int:
    """Aggregate and write; returns the number of hourly rows written."""
    rows = aggregate(raw_path, column_map)
    write_hourly(rows, out_path)
    return len(rows)


def parse_column_map(items) -> dict[str, str]:
    """``["timestamp=Time", ...]`` -> ``{"timestamp": "Time"}``."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"column mapping {item!r} must look like ours=theirs")
        ours, theirs = (s.strip() for s in item.split("=", 1))
        if ours not in COLUMNS:
            raise ConfigError(f"unknown column {ours!r}; expected one of {COLUMNS}")
        out[ours] = theirs
    return out
