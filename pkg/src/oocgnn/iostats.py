"""Byte-level I/O accounting, shared by every stage of a layer run."""

from dataclasses import dataclass, field


@dataclass
class IOCounters:
    """Raw byte counts, attributed by what the bytes were for.

    feature_bytes_read counts embedding-row payload reads (including
    alignment slack when direct I/O rounds the range up), so the
    read-amplification checks see what actually hit the device.
    """

    feature_bytes_read: int = 0
    index_bytes_read: int = 0
    topology_bytes_read: int = 0
    cold_bytes_read: int = 0
    cold_bytes_written: int = 0
    spill_bytes_written: int = 0

    def total_read(self) -> int:
        return (
            self.feature_bytes_read
            + self.index_bytes_read
            + self.topology_bytes_read
            + self.cold_bytes_read
        )

    def total_written(self) -> int:
        return self.cold_bytes_written + self.spill_bytes_written

    def add(self, other: "IOCounters") -> None:
        self.feature_bytes_read += other.feature_bytes_read
        self.index_bytes_read += other.index_bytes_read
        self.topology_bytes_read += other.topology_bytes_read
        self.cold_bytes_read += other.cold_bytes_read
        self.cold_bytes_written += other.cold_bytes_written
        self.spill_bytes_written += other.spill_bytes_written


@dataclass
class StageCounters:
    """Event counts kept by the orchestrator while a layer runs."""

    messages: int = 0
    evictions: int = 0
    reloads: int = 0
    admissions: int = 0
    graduations: int = 0
    hot_peak: int = 0
    chunk_reload_pcts: list = field(default_factory=list)
