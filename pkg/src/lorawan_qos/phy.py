"""LoRa airtime and the per-MCS timing table."""

from __future__ import annotations

import math
from dataclasses import dataclass

SF_MIN = 7
SF_MAX = 12
MAX_PAYLOAD_BYTES = 255


@dataclass(frozen=True)
class PhyConfig:
    """Modem settings shared by every MCS.

    ``coding_rate`` is the denominator offset: 1..4 for 4/5..4/8.
    ``ldro_min_sf`` is the smallest SF that enables low-data-rate
    optimization (``None`` disables it).
    """

    bandwidth_hz: float = 125_000.0
    coding_rate: int = 1
    preamble_symbols: int = 8
    explicit_header: bool = True
    uplink_crc: bool = True
    downlink_crc: bool = False
    ldro_min_sf: int | None = 11

    def __post_init__(self) -> None:
        if self.bandwidth_hz <= 0:
            raise ValueError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")
        if not 1 <= self.coding_rate <= 4:
            raise ValueError(f"coding_rate must be in 1..4, got {self.coding_rate}")
        if self.preamble_symbols < 0:
            raise ValueError("preamble_symbols must be non-negative")

    def ldro(self, spreading_factor: int) -> bool:
        return self.ldro_min_sf is not None and spreading_factor >= self.ldro_min_sf


def symbol_time(spreading_factor: int, bandwidth_hz: float) -> float:
    return (2**spreading_factor) / bandwidth_hz


def airtime(
    spreading_factor: int,
    payload_bytes: int,
    phy_config: PhyConfig | None = None,
    *,
    crc: bool | None = None,
) -> float:
    """Time on air in seconds of one LoRa frame (Semtech AN1200.13 formula).

    ``crc`` overrides ``phy_config.uplink_crc``; downlink frames carry no
    payload CRC in LoRaWAN.
    """
    cfg = phy_config or PhyConfig()
    if not SF_MIN <= spreading_factor <= SF_MAX:
        raise ValueError(f"spreading factor must be in [{SF_MIN}, {SF_MAX}], got {spreading_factor}")
    if not 0 <= payload_bytes <= MAX_PAYLOAD_BYTES:
        raise ValueError(f"payload_bytes must be in [0, {MAX_PAYLOAD_BYTES}], got {payload_bytes}")
    use_crc = cfg.uplink_crc if crc is None else crc

    t_sym = symbol_time(spreading_factor, cfg.bandwidth_hz)
    de = 1 if cfg.ldro(spreading_factor) else 0
    ih = 0 if cfg.explicit_header else 1
    numerator = 8 * payload_bytes - 4 * spreading_factor + 28 + 16 * int(use_crc) - 20 * ih
    blocks = math.ceil(numerator / (4 * (spreading_factor - 2 * de)))
    n_payload = 8 + max(blocks * (cfg.coding_rate + 4), 0)
    return (cfg.preamble_symbols + 4.25 + n_payload) * t_sym


@dataclass(frozen=True)
class McsParams:
    index: int
    spreading_factor: int
    t_data: float
    t_ack: float

    def __post_init__(self) -> None:
        if self.t_data <= 0 or self.t_ack <= 0:
            raise ValueError("airtimes must be positive")


@dataclass(frozen=True)
class McsTable:
    """MCS 0 is the slowest (SF12); index grows towards faster rates."""

    entries: tuple[McsParams, ...]
    payload_bytes: int = 51

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("McsTable needs at least one MCS")
        for i, e in enumerate(self.entries):
            if e.index != i:
                raise ValueError(f"MCS entry {i} carries index {e.index}")
        for a, b in zip(self.entries, self.entries[1:]):
            if not (b.t_data < a.t_data and b.t_ack < a.t_ack):
                raise ValueError(f"airtimes must strictly decrease from MCS {a.index} to MCS {b.index}")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> McsParams:
        return self.entries[i]

    @property
    def slowest(self) -> McsParams:
        return self.entries[0]


@dataclass(frozen=True)
class RadioTiming:
    """Class A receive-window offsets and retransmission backoff."""

    t1: float = 1.0
    t2: float = 2.0
    delta_m: int = 0
    retry_delay_min: float = 1.0
    retry_delay_max: float = 3.0

    def __post_init__(self) -> None:
        if not 0 < self.t1 < self.t2:
            raise ValueError(f"need 0 < t1 < t2, got t1={self.t1}, t2={self.t2}")
        if not 0 < self.retry_delay_min <= self.retry_delay_max:
            raise ValueError("need 0 < retry_delay_min <= retry_delay_max")
        if self.delta_m < 0:
            raise ValueError("delta_m must be non-negative")

    def ack1_mcs(self, mcs: int) -> int:
        """MCS of the first-window ACK answering an uplink at ``mcs``."""
        return max(mcs - self.delta_m, 0)


def build_mcs_table(
    phy_config: PhyConfig | None = None,
    payload_bytes: int = 51,
    m: int = 6,
    ack_payload_bytes: int = 0,
) -> McsTable:
    if not 1 <= m <= 6:
        raise ValueError(f"number of MCSs must be in 1..6, got {m}")
    cfg = phy_config or PhyConfig()
    entries = []
    for index in range(m):
        sf = SF_MAX - index
        entries.append(
            McsParams(
                index=index,
                spreading_factor=sf,
                t_data=airtime(sf, payload_bytes, cfg),
                t_ack=airtime(sf, ack_payload_bytes, cfg, crc=cfg.downlink_crc),
            )
        )
    return McsTable(tuple(entries), payload_bytes=payload_bytes)
