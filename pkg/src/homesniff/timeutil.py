"""Wall-clock helpers. Timestamps are naive local microseconds since the epoch."""

from datetime import datetime, timedelta

US = 1_000_000
DAY_US = 86_400 * US
_EPOCH = datetime(1970, 1, 1)


def to_datetime(ts_us: int) -> datetime:
    return _EPOCH + timedelta(microseconds=int(ts_us))


def from_datetime(dt: datetime) -> int:
    delta = dt - _EPOCH
    return (delta.days * 86_400 + delta.seconds) * US + delta.microseconds


def iso(ts_us: int) -> str:
    dt = to_datetime(ts_us)
    if dt.microsecond:
        return dt.isoformat(timespec="microseconds")
    return dt.isoformat(timespec="seconds")


def day_start(ts_us: int) -> int:
    return ts_us - ts_us % DAY_US


def seconds_of_day(ts_us: int) -> float:
    return (ts_us % DAY_US) / US


def weekday(ts_us: int) -> int:
    """Monday = 0."""
    return to_datetime(ts_us).weekday()


def parse_hhmm(text: str) -> int:
    """"HH:MM" to seconds of day; "24:00" allowed."""
    hh, mm = text.strip().split(":")
    h, m = int(hh), int(mm)
    if not (0 <= h <= 24 and 0 <= m < 60) or (h == 24 and m):
        raise ValueError(f"bad time of day {text!r}")
    return h * 3600 + m * 60


def format_hhmm(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600:02d}:{(s % 3600) // 60:02d}" + (f":{s % 60:02d}" if s % 60 else "")
