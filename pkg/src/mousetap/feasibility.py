"""Physics and market analyses: can a given sensor resolve surface waves at
a given frequency, what fraction of phonemes survives a polling rate, and
which commercial mice are exposed.

Unit convention, pinned once: DPI in counts/inch, 25.4 mm per inch, wave
speed converted to mm/s, wavelength in mm.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass

from .errors import ParameterError

MM_PER_INCH = 25.4

# Vulnerability class thresholds inferred from the shipped mouse database's
# color partition: both axes hot = red, polling only = orange, DPI only = yellow.
DPI_THRESHOLD = 20000
POLL_THRESHOLD_HZ = 4000

_CLASS_SEVERITY = {"red": 0, "orange": 1, "yellow": 2, "none": 3}


@dataclass(frozen=True)
class FeasibilityQuery:
    f_hz: float  # acoustic frequency
    dpi: float  # sensor resolution, counts/inch
    poll_rate_hz: float
    wave_speed_ms: float = 3000.0  # surface wave speed, m/s (mid-range wood)

    def __post_init__(self):
        for name in ("f_hz", "dpi", "poll_rate_hz", "wave_speed_ms"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")


@dataclass(frozen=True)
class FeasibilityVerdict:
    passed: bool
    margin: float  # (25.4/D) / (lambda/2); < 1 means resolvable
    wavelength_mm: float
    min_step_mm: float

    def __str__(self):
        return (
            f"{'pass' if self.passed else 'fail'} "
            f"(step {self.min_step_mm:.6g} mm vs half-wavelength "
            f"{self.wavelength_mm / 2:.6g} mm, margin {self.margin:.3g})"
        )


@dataclass(frozen=True)
class PhonemeEntry:
    phoneme: str
    char_freq_hz: float
    weight: float

    def __post_init__(self):
        if self.char_freq_hz <= 0:
            raise ParameterError(f"{self.phoneme}: char_freq_hz must be > 0")
        if self.weight < 0:
            raise ParameterError(f"{self.phoneme}: weight must be >= 0")


@dataclass(frozen=True)
class MouseRecord:
    vendor_model: str
    sensor: str
    dpi: float
    ips: float
    poll_rate_hz: float
    price_usd: float

    def __post_init__(self):
        if self.dpi <= 0 or self.ips <= 0 or self.poll_rate_hz <= 0:
            raise ParameterError(f"{self.vendor_model}: dpi/ips/poll must be > 0")


@dataclass(frozen=True)
class RankedMouse:
    record: MouseRecord
    vulnerability: str  # red | orange | yellow | none
    coverage_pct: float  # phoneme coverage at the mouse's polling rate


def dpi_wavelength_check(q: FeasibilityQuery) -> FeasibilityVerdict:
    """Resolvability condition: smallest detectable step < half wavelength.

    wavelength = wave_speed / f; the check is 25.4/DPI < wavelength/2,
    strictly. Returns the ratio of the two sides as the margin.
    """
    wavelength_mm = (q.wave_speed_ms * 1000.0) / q.f_hz
    min_step_mm = MM_PER_INCH / q.dpi
    # single-division form of (25.4/D)/(lambda/2): exact at the boundary
    margin = (2.0 * MM_PER_INCH * q.f_hz) / (q.dpi * q.wave_speed_ms * 1000.0)
    return FeasibilityVerdict(margin < 1.0, margin, wavelength_mm, min_step_mm)


def nyquist_limit(poll_rate_hz: float) -> float:
    """Highest recoverable acoustic frequency: half the polling rate."""
    if poll_rate_hz <= 0:
        raise ParameterError("poll_rate_hz must be > 0")
    return poll_rate_hz / 2.0


def phoneme_coverage(poll_rate_hz: float, table: list[PhonemeEntry] | None = None) -> float:
    """Percentage of phoneme prevalence whose characteristic frequency fits
    under the Nyquist limit of the given polling rate."""
    if table is None:
        table = load_phoneme_table()
    if not table:
        raise ParameterError("phoneme table is empty")
    total = sum(e.weight for e in table)
    if total <= 0:
        raise ParameterError("phoneme table weights sum to zero")
    limit = nyquist_limit(poll_rate_hz)
    covered = sum(e.weight for e in table if e.char_freq_hz <= limit)
    return 100.0 * covered / total


def classify_mouse(rec: MouseRecord) -> str:
    dpi_hot = rec.dpi >= DPI_THRESHOLD
    poll_hot = rec.poll_rate_hz >= POLL_THRESHOLD_HZ
    if dpi_hot and poll_hot:
        return "red"
    if poll_hot:
        return "orange"
    if dpi_hot:
        return "yellow"
    return "none"


def rank_mice(db: list[MouseRecord] | None = None,
              table: list[PhonemeEntry] | None = None) -> list[RankedMouse]:
    """Classify and sort a mouse database by vulnerability.

    red: DPI and poll rate both above threshold; orange: poll rate only;
    yellow: DPI only; none otherwise. Each entry carries the phoneme
    coverage reachable at its polling rate. Sorted by severity, then name.
    """
    if db is None:
        db = load_mouse_db()
    if table is None:
        table = load_phoneme_table()
    ranked = [
        RankedMouse(rec, classify_mouse(rec),
                    phoneme_coverage(rec.poll_rate_hz, table))
        for rec in db
    ]
    ranked.sort(key=lambda r: (_CLASS_SEVERITY[r.vulnerability], r.record.vendor_model))
    return ranked


# --- Bundled data ---------------------------------------------------------

def _data_path(name: str):
    return importlib.resources.files("mousetap.data").joinpath(name)


def load_phoneme_table(path=None) -> list[PhonemeEntry]:
    """Read a `phoneme,freq_hz,weight` CSV (header required)."""
    if path is None:
        with importlib.resources.as_file(_data_path("phonemes.csv")) as p:
            return load_phoneme_table(p)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            PhonemeEntry(row["phoneme"], float(row["freq_hz"]), float(row["weight"]))
            for row in reader
        ]


def load_mouse_db(path=None) -> list[MouseRecord]:
    """Read a `vendor_model,sensor,dpi,ips,poll_rate_hz,price_usd` CSV."""
    if path is None:
        with importlib.resources.as_file(_data_path("mice.csv")) as p:
            return load_mouse_db(p)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            MouseRecord(row["vendor_model"], row["sensor"], float(row["dpi"]),
                        float(row["ips"]), float(row["poll_rate_hz"]),
                        float(row["price_usd"]))
            for row in reader
        ]
