"""
Flight-record ingestion and hourly delay matrices.

Raw flight exports are parsed into ``FlightRecord`` objects, then averaged per
airport, local day and local scheduled hour into a ``DelayMatrix`` of shape
days x 24. Hours without any operation hold 0 and are masked out.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import List, Optional

import numpy as np
import pandas as pd

from utils.data_manager import DataFormatError, load_json, load_npy, save_json, save_npy

logger = logging.getLogger(__name__)

HOURS = 24
AIRPORT_CODE = re.compile(r'[A-Z0-9]+')


class DelayKind(Enum):
    DEPARTURE = 'Departure'
    ARRIVAL = 'Arrival'

    @property
    def short(self):
        return 'Dep' if self is DelayKind.DEPARTURE else 'Arr'

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower()
        for kind in cls:
            if key in (kind.value.lower(), kind.short.lower()):
                return kind
        raise ValueError(f"Unknown delay kind: {text!r}")


class Unit(Enum):
    SECONDS = 'Seconds'
    MINUTES = 'Minutes'

    @property
    def seconds(self):
        return 1.0 if self is Unit.SECONDS else 60.0

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower()
        for unit in cls:
            if key == unit.value.lower():
                return unit
        raise ValueError(f"Unknown unit: {text!r}")


@dataclass(frozen=True)
class Region:
    name: str
    unit: Unit
    expected_days: int


REGIONS = {
    'EU': Region('EU', Unit.SECONDS, 610),
    'US': Region('US', Unit.MINUTES, 1825),
}


def get_region(name):
    try:
        return REGIONS[str(name).upper()]
    except KeyError:
        raise ValueError(f"Unknown region: {name!r} (expected one of {sorted(REGIONS)})")


def _utc(value):
    if value is None or value is pd.NaT:
        return None
    stamp = pd.Timestamp(value)
    if stamp.tzinfo is None:
        return stamp.tz_localize('UTC')
    return stamp.tz_convert('UTC')


@dataclass(frozen=True)
class FlightRecord:
    flight_id: str
    origin: str
    destination: str
    sched_dep: pd.Timestamp
    sched_arr: pd.Timestamp
    act_dep: Optional[pd.Timestamp] = None
    act_arr: Optional[pd.Timestamp] = None

    def __post_init__(self):
        for name in ('sched_dep', 'sched_arr', 'act_dep', 'act_arr'):
            object.__setattr__(self, name, _utc(getattr(self, name)))
        for name in ('origin', 'destination'):
            code = getattr(self, name)
            if not isinstance(code, str) or not AIRPORT_CODE.fullmatch(code):
                raise ValueError(f"Invalid airport code for {name}: {code!r}")
        if self.sched_dep is None or self.sched_arr is None:
            raise ValueError("Scheduled departure and arrival times are required")
        if not self.sched_arr > self.sched_dep:
            raise ValueError("Scheduled arrival must be after scheduled departure")

    def delay_seconds(self, kind):
        """Actual minus scheduled time, or None when the actual time is unknown"""
        if kind is DelayKind.DEPARTURE:
            actual, scheduled = self.act_dep, self.sched_dep
        else:
            actual, scheduled = self.act_arr, self.sched_arr
        if actual is None:
            return None
        return (actual - scheduled).total_seconds()


@dataclass(frozen=True)
class ColumnSchema:
    """Maps FlightRecord fields to CSV column names"""
    flight_id: str = 'flight_id'
    origin: str = 'origin'
    destination: str = 'destination'
    sched_dep: str = 'sched_dep'
    act_dep: str = 'act_dep'
    sched_arr: str = 'sched_arr'
    act_arr: str = 'act_arr'
    timestamp_format: str = 'ISO8601'

    @property
    def timestamp_fields(self):
        return ('sched_dep', 'act_dep', 'sched_arr', 'act_arr')

    @property
    def required_fields(self):
        return ('flight_id', 'origin', 'destination', 'sched_dep', 'sched_arr')

    def column(self, field_name):
        return getattr(self, field_name)


@dataclass(frozen=True)
class RejectEntry:
    row: int
    reason: str
    raw: str


@dataclass
class ParsedFlights:
    records: List[FlightRecord]
    rejects: List[RejectEntry] = field(default_factory=list)

    def rejects_frame(self):
        return pd.DataFrame([r.__dict__ for r in self.rejects], columns=['row', 'reason', 'raw'])


def parse_flight_csv(file_path, schema=None):
    """
    Parse a flight export into records.

    Rows with a malformed timestamp or an invalid field are collected in the
    rejects list instead of aborting; rows without actual times are kept with
    the optional field left empty.
    """
    schema = schema or ColumnSchema()
    frame = pd.read_csv(file_path, dtype=str, keep_default_na=False, skipinitialspace=False)

    fields = schema.required_fields + ('act_dep', 'act_arr')
    missing = [schema.column(f) for f in fields if schema.column(f) not in frame.columns]
    if missing:
        raise ValueError(f"Missing required column(s) in {file_path}: {', '.join(missing)}")

    text = {f: frame[schema.column(f)].astype(str).str.strip() for f in fields}
    stamps = {}
    malformed = pd.Series(False, index=frame.index)
    for name in schema.timestamp_fields:
        present = text[name] != ''
        parsed = pd.to_datetime(text[name].where(present), utc=True, errors='coerce',
                                format=schema.timestamp_format)
        malformed |= present & parsed.isna()
        stamps[name] = parsed

    records, rejects = [], []
    for position, index in enumerate(frame.index):
        row_number = position + 1
        raw = ','.join(frame.loc[index].astype(str))
        if malformed[index]:
            bad = [n for n in schema.timestamp_fields if text[n][index] != '' and pd.isna(stamps[n][index])]
            rejects.append(RejectEntry(row_number, f"malformed timestamp in {', '.join(bad)}", raw))
            continue
        empty = [n for n in schema.required_fields if text[n][index] == '']
        if empty:
            rejects.append(RejectEntry(row_number, f"missing value in {', '.join(empty)}", raw))
            continue
        try:
            records.append(FlightRecord(
                flight_id=text['flight_id'][index],
                origin=text['origin'][index],
                destination=text['destination'][index],
                sched_dep=stamps['sched_dep'][index],
                sched_arr=stamps['sched_arr'][index],
                act_dep=None if pd.isna(stamps['act_dep'][index]) else stamps['act_dep'][index],
                act_arr=None if pd.isna(stamps['act_arr'][index]) else stamps['act_arr'][index],
            ))
        except ValueError as e:
            rejects.append(RejectEntry(row_number, str(e), raw))

    if rejects:
        logger.warning("%s: %d row(s) rejected, %d parsed", file_path, len(rejects), len(records))
    return ParsedFlights(records=records, rejects=rejects)


@dataclass
class DelayMatrix:
    airport: str
    kind: DelayKind
    unit: Unit
    values: np.ndarray
    mask: np.ndarray
    day_labels: List[date]

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)
        self.mask = np.array(self.mask, dtype=bool)
        self.day_labels = [pd.Timestamp(d).date() for d in self.day_labels]
        if self.values.ndim != 2 or self.values.shape[1] != HOURS:
            raise ValueError(f"Delay matrix must have shape (days, {HOURS}), got {self.values.shape}")
        if self.mask.shape != self.values.shape:
            raise ValueError(f"Mask shape {self.mask.shape} does not match values {self.values.shape}")
        if len(self.day_labels) != self.values.shape[0]:
            raise ValueError(f"Expected {self.values.shape[0]} day labels, got {len(self.day_labels)}")
        if any(b <= a for a, b in zip(self.day_labels, self.day_labels[1:])):
            raise ValueError("Day labels must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Delay values must be finite")
        if np.any(self.values[~self.mask] != 0):
            raise ValueError("Unmasked cells must hold the fill value 0")

    @classmethod
    def from_values(cls, values, airport='TOY', kind=DelayKind.ARRIVAL, unit=Unit.MINUTES,
                    start=date(2000, 1, 1), mask=None):
        """Dense matrix with consecutive day labels starting at ``start``"""
        values = np.asarray(values, dtype=np.float64)
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        labels = pd.date_range(start, periods=values.shape[0], freq='D').date
        return cls(airport, kind, unit, values, mask, list(labels))

    @property
    def days(self):
        return self.values.shape[0]

    def hour_values(self, hour):
        """Observed (masked-true) values for a 0-based hour"""
        return self.values[self.mask[:, hour], hour]

    def check_region(self, region):
        if self.unit is not region.unit:
            raise DataFormatError(
                f"{self.airport}: unit {self.unit.value} does not match region "
                f"{region.name} ({region.unit.value})")


def derive_calendar(records, timezones=None):
    """
    Every local date from the first to the last scheduled operation. Departures
    are read in the origin's time zone and arrivals in the destination's, so
    each operation lands on a calendar day at its airport.
    """
    if not records:
        raise ValueError("Cannot derive a calendar from no records")
    timezones = timezones or {}
    by_zone = {}
    for r in records:
        by_zone.setdefault(timezones.get(r.origin, 'UTC'), []).append(r.sched_dep)
        by_zone.setdefault(timezones.get(r.destination, 'UTC'), []).append(r.sched_arr)
    dates = []
    for tz, stamps in sorted(by_zone.items()):
        local = pd.DatetimeIndex(stamps).tz_convert(tz)
        dates += [local.min().date(), local.max().date()]
    return list(pd.date_range(min(dates), max(dates), freq='D').date)


def aggregate_hourly(records, airport, kind, unit, calendar, tz='UTC'):
    """
    Average delay per local day and scheduled local hour at ``airport``.

    Operations are bucketed by their scheduled time converted to ``tz``;
    early operations keep their negative delay.
    """
    if not calendar:
        raise ValueError("Calendar must contain at least one date")
    if not records:
        raise ValueError("No flight records to aggregate")
    calendar = sorted({pd.Timestamp(d).date() for d in calendar})
    day_index = {d: i for i, d in enumerate(calendar)}

    if kind is DelayKind.DEPARTURE:
        selected = [r for r in records if r.origin == airport and r.act_dep is not None]
        scheduled = [r.sched_dep for r in selected]
    else:
        selected = [r for r in records if r.destination == airport and r.act_arr is not None]
        scheduled = [r.sched_arr for r in selected]

    values = np.zeros((len(calendar), HOURS))
    mask = np.zeros((len(calendar), HOURS), dtype=bool)
    if selected:
        local = pd.DatetimeIndex(scheduled).tz_convert(tz)
        frame = pd.DataFrame({
            'day': local.date,
            'hour': local.hour,
            'delay': [r.delay_seconds(kind) / unit.seconds for r in selected],
        })
        inside = frame["day"].isin(list(day_index))
        if not inside.all():
            logger.warning("%s %s: %d of %d operations fall outside the calendar and are left out",
                           airport, kind.value, int((~inside).sum()), len(frame))
        frame = frame[inside]
        # Sorted input makes the per-cell sums independent of record order
        frame = frame.sort_values(['day', 'hour', 'delay'], kind='mergesort')
        cells = frame.groupby(['day', 'hour'], sort=True)['delay'].mean()
        rows = np.array([day_index[d] for d in cells.index.get_level_values('day')], dtype=int)
        cols = np.asarray(cells.index.get_level_values('hour'), dtype=int)
        values[rows, cols] = cells.to_numpy()
        mask[rows, cols] = True

    logger.debug("%s %s: %d operations over %d days", airport, kind.value, len(selected), len(calendar))
    return DelayMatrix(airport, kind, unit, values, mask, calendar)


def sidecar_path(file_path):
    base = file_path[:-4] if file_path.endswith('.npy') else file_path
    return f"{base}.meta.json"


def save_matrix(matrix, file_path):
    """Write values as NPY and metadata plus mask as a JSON sidecar"""
    save_npy(file_path, matrix.values)
    save_json(sidecar_path(file_path), {
        'format_version': 1,
        'airport': matrix.airport,
        'kind': matrix.kind.value,
        'unit': matrix.unit.value,
        'shape': list(matrix.values.shape),
        'day_labels': [d.isoformat() for d in matrix.day_labels],
        'mask': matrix.mask.astype(int).tolist(),
    })


def load_matrix(file_path, region=None):
    """Load a matrix written by ``save_matrix``; ``region`` enforces its unit"""
    values = load_npy(file_path)
    if values.ndim != 2 or values.shape[1] != HOURS:
        raise DataFormatError(f"{file_path}: expected (days, {HOURS}) values, got shape {values.shape}")
    meta_path = sidecar_path(file_path)
    if not os.path.exists(meta_path):
        raise DataFormatError(f"Missing metadata sidecar {meta_path}")
    meta = load_json(meta_path)
    try:
        if tuple(meta['shape']) != values.shape:
            raise DataFormatError(f"{file_path}: header shape {meta['shape']} does not match data {values.shape}")
        matrix = DelayMatrix(
            airport=meta['airport'],
            kind=DelayKind.parse(meta['kind']),
            unit=Unit.parse(meta['unit']),
            values=values,
            mask=np.asarray(meta['mask'], dtype=bool),
            day_labels=[date.fromisoformat(d) for d in meta['day_labels']],
        )
    except DataFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"Invalid matrix metadata in {meta_path}: {str(e)}") from e
    if region is not None:
        matrix.check_region(region)
    return matrix
