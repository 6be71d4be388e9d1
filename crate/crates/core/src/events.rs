//! Asynchronous event streams: types, the EVM1 container, CSV ingestion and
//! time slicing.
//!
//! An event is a single per-pixel brightness change `(x, y, t, p)`. Streams
//! are validated on construction (bounds and non-decreasing timestamps) and
//! are immutable afterwards, so every consumer downstream can rely on those
//! invariants without re-checking.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes at the start of every EVM1 blob.
pub const EVM_MAGIC: &[u8; 4] = b"EVM1";
/// Size of the EVM1 header in bytes.
pub const EVM_HEADER_LEN: usize = 16;
/// Size of one EVM1 event record in bytes.
pub const EVM_RECORD_LEN: usize = 14;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("bad magic: expected \"EVM1\"")]
    BadMagic,
    #[error("truncated record: {0}")]
    TruncatedRecord(String),
    #[error("event {index} at ({x},{y}) lies outside the {width}x{height} sensor")]
    OutOfBoundsEvent {
        index: usize,
        x: u32,
        y: u32,
        width: u16,
        height: u16,
    },
    #[error("event {index} has timestamp {t} earlier than its predecessor {prev}")]
    NonMonotonicTimestamp { index: usize, t: u64, prev: u64 },
    #[error("invalid polarity {value} in event {index}")]
    InvalidPolarity { index: usize, value: i64 },
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("invalid window [{start}, {end})")]
    InvalidWindow { start: u64, end: u64 },
    #[error("invalid geometry {width}x{height}")]
    InvalidGeometry { width: u32, height: u32 },
}

/// Sign of the brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn from_sign(value: i64) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    /// Frame channel for this polarity: 0 for +1, 1 for -1.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::On => Polarity::Off,
            Polarity::Off => Polarity::On,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    width: u16,
    height: u16,
    pub label: String,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16, label: impl Into<String>) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::InvalidGeometry {
                width: width as u32,
                height: height as u32,
            });
        }
        Ok(Self {
            width,
            height,
            label: label.into(),
        })
    }

    /// DAVIS346, 346x260.
    pub fn davis346() -> Self {
        Self::new(346, 260, "DAVIS346").unwrap()
    }

    /// Prophesee EVK4 (IMX636), 1280x720.
    pub fn evk4() -> Self {
        Self::new(1280, 720, "EVK4").unwrap()
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width as u32 && y < self.height as u32
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)?;
        if !self.label.is_empty() {
            write!(f, " ({})", self.label)?;
        }
        Ok(())
    }
}

/// Half-open time interval `[start, end)` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    start: u64,
    end: u64,
}

impl TimeWindow {
    pub fn new(start: u64, end: u64) -> Result<Self, EventError> {
        if start >= end {
            return Err(EventError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn duration(&self) -> u64 {
        self.end - self.start
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }
}

/// A validated, time-ordered event stream bound to a sensor geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and timestamp order.
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self, EventError> {
        validate(&geometry, &events)?;
        Ok(Self { geometry, events })
    }

    /// Like [`EventStream::new`] but stably sorts by timestamp first. Returns
    /// the stream and the number of events that were out of order.
    pub fn new_sorted(
        geometry: SensorGeometry,
        mut events: Vec<Event>,
    ) -> Result<(Self, usize), EventError> {
        let reordered = events.windows(2).filter(|w| w[1].t < w[0].t).count();
        if reordered > 0 {
            events.sort_by_key(|e| e.t);
        }
        Ok((Self::new(geometry, events)?, reordered))
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_timestamp(&self) -> Option<u64> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }

    /// Index range of the events inside `window`, found by binary search.
    pub fn window_range(&self, window: TimeWindow) -> std::ops::Range<usize> {
        let lo = self.events.partition_point(|e| e.t < window.start);
        let hi = lo + self.events[lo..].partition_point(|e| e.t < window.end);
        lo..hi
    }

    /// Events with `start <= t < end`, order preserved.
    pub fn slice(&self, window: TimeWindow) -> EventStream {
        EventStream {
            geometry: self.geometry.clone(),
            events: self.events[self.window_range(window)].to_vec(),
        }
    }

    /// Same stream with every polarity inverted.
    pub fn with_flipped_polarity(&self) -> EventStream {
        EventStream {
            geometry: self.geometry.clone(),
            events: self
                .events
                .iter()
                .map(|e| Event { p: e.p.flipped(), ..*e })
                .collect(),
        }
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

fn validate(geometry: &SensorGeometry, events: &[Event]) -> Result<(), EventError> {
    let mut prev = 0u64;
    for (index, e) in events.iter().enumerate() {
        if !geometry.contains(e.x as u32, e.y as u32) {
            return Err(EventError::OutOfBoundsEvent {
                index,
                x: e.x as u32,
                y: e.y as u32,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if index > 0 && e.t < prev {
            return Err(EventError::NonMonotonicTimestamp {
                index,
                t: e.t,
                prev,
            });
        }
        prev = e.t;
    }
    Ok(())
}

/// Time-slice a stream. Fails with `InvalidWindow` when `start >= end`.
pub fn slice(stream: &EventStream, start: u64, end: u64) -> Result<EventStream, EventError> {
    Ok(stream.slice(TimeWindow::new(start, end)?))
}

/// Decode an EVM1 blob.
///
/// Layout, little-endian: `"EVM1" | width u16 | height u16 | count u64`,
/// then `count` records of `x u16 | y u16 | t u64 | p i8 | pad u8`.
pub fn parse_evm(bytes: &[u8]) -> Result<EventStream, EventError> {
    let geometry = parse_evm_header(bytes)?;
    let (events, _) = decode_records(bytes)?;
    EventStream::new(geometry, events)
}

/// Decode an EVM1 blob, sorting out-of-order timestamps instead of failing.
/// Returns the number of out-of-order events found.
pub fn parse_evm_sorted(bytes: &[u8]) -> Result<(EventStream, usize), EventError> {
    let geometry = parse_evm_header(bytes)?;
    let (events, _) = decode_records(bytes)?;
    EventStream::new_sorted(geometry, events)
}

fn parse_evm_header(bytes: &[u8]) -> Result<SensorGeometry, EventError> {
    if bytes.len() < 4 || &bytes[..4] != EVM_MAGIC {
        return Err(EventError::BadMagic);
    }
    if bytes.len() < EVM_HEADER_LEN {
        return Err(EventError::TruncatedRecord(format!(
            "header needs {EVM_HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    SensorGeometry::new(width, height, "")
}

fn decode_records(bytes: &[u8]) -> Result<(Vec<Event>, u64), EventError> {
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[EVM_HEADER_LEN..];
    let expected = (count as u128) * EVM_RECORD_LEN as u128;
    if (body.len() as u128) < expected {
        return Err(EventError::TruncatedRecord(format!(
            "header declares {count} records ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    if body.len() as u128 > expected {
        return Err(EventError::TruncatedRecord(format!(
            "{} trailing bytes after {count} records",
            body.len() as u128 - expected
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (index, rec) in body.chunks_exact(EVM_RECORD_LEN).enumerate() {
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let t = u64::from_le_bytes(rec[4..12].try_into().unwrap());
        let raw = rec[12] as i8;
        let p = Polarity::from_sign(raw as i64).ok_or(EventError::InvalidPolarity {
            index,
            value: raw as i64,
        })?;
        events.push(Event { x, y, t, p });
    }
    Ok((events, count))
}

/// Encode a stream as EVM1. Output is a pure function of the stream.
pub fn write_evm(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVM_HEADER_LEN + stream.len() * EVM_RECORD_LEN);
    out.extend_from_slice(EVM_MAGIC);
    out.extend_from_slice(&stream.geometry.width.to_le_bytes());
    out.extend_from_slice(&stream.geometry.height.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.push(0);
    }
    out
}

/// Parse `x,y,t,p` lines. A first line that does not start with a digit is
/// treated as a header. Polarity accepts `1`/`-1` and `0` (mapped to -1).
/// Blank lines are skipped.
pub fn parse_csv(text: &str, geometry: SensorGeometry) -> Result<EventStream, EventError> {
    EventStream::new(geometry, parse_csv_events(text)?)
}

/// CSV ingestion that sorts by timestamp instead of rejecting disorder.
pub fn parse_csv_sorted(
    text: &str,
    geometry: SensorGeometry,
) -> Result<(EventStream, usize), EventError> {
    EventStream::new_sorted(geometry, parse_csv_events(text)?)
}

fn parse_csv_events(text: &str) -> Result<Vec<Event>, EventError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && !line.starts_with(|c: char| c.is_ascii_digit()) {
            continue;
        }
        events.push(parse_csv_line(line).ok_or(EventError::MalformedLine(lineno))?);
    }
    Ok(events)
}

fn parse_csv_line(line: &str) -> Option<Event> {
    let mut fields = line.split(',').map(str::trim);
    let x: u16 = fields.next()?.parse().ok()?;
    let y: u16 = fields.next()?.parse().ok()?;
    let t: u64 = fields.next()?.parse().ok()?;
    let p = match fields.next()?.parse::<i64>().ok()? {
        0 | -1 => Polarity::Off,
        1 => Polarity::On,
        _ => return None,
    };
    if fields.next().is_some() {
        return None;
    }
    Some(Event { x, y, t, p })
}

/// Render events as CSV with a header line and signed polarity.
pub fn write_csv(stream: &EventStream) -> String {
    let mut out = String::from("x,y,t,p\n");
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t, e.p.sign()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn davis() -> SensorGeometry {
        SensorGeometry::davis346()
    }

    fn header(w: u16, h: u16, n: u64) -> Vec<u8> {
        let mut b = b"EVM1".to_vec();
        b.extend_from_slice(&w.to_le_bytes());
        b.extend_from_slice(&h.to_le_bytes());
        b.extend_from_slice(&n.to_le_bytes());
        b
    }

    fn record(x: u16, y: u16, t: u64, p: i8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&x.to_le_bytes());
        b.extend_from_slice(&y.to_le_bytes());
        b.extend_from_slice(&t.to_le_bytes());
        b.push(p as u8);
        b.push(0);
        b
    }

    #[test]
    fn empty_blob_parses_to_empty_stream() {
        let s = parse_evm(&header(346, 260, 0)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.geometry().width(), 346);
        assert_eq!(s.geometry().height(), 260);
    }

    #[test]
    fn single_record() {
        let mut b = header(346, 260, 1);
        b.extend(record(10, 20, 1000, 1));
        let s = parse_evm(&b).unwrap();
        assert_eq!(s.events(), &[Event::new(10, 20, 1000, Polarity::On)]);
    }

    #[test]
    fn out_of_bounds_record_rejected() {
        let mut b = header(346, 260, 1);
        b.extend(record(400, 20, 1000, 1));
        assert!(matches!(
            parse_evm(&b),
            Err(EventError::OutOfBoundsEvent { x: 400, .. })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert_eq!(parse_evm(b"EVM2xxxxxxxxxxxx"), Err(EventError::BadMagic));
        assert_eq!(parse_evm(b""), Err(EventError::BadMagic));
        assert!(matches!(
            parse_evm(b"EVM1\x01\x00"),
            Err(EventError::TruncatedRecord(_))
        ));
        let mut b = header(346, 260, 2);
        b.extend(record(1, 1, 5, 1));
        assert!(matches!(parse_evm(&b), Err(EventError::TruncatedRecord(_))));
    }

    #[test]
    fn non_monotonic_rejected_unless_sorting() {
        let mut b = header(346, 260, 2);
        b.extend(record(1, 1, 50, 1));
        b.extend(record(1, 1, 10, -1));
        assert!(matches!(
            parse_evm(&b),
            Err(EventError::NonMonotonicTimestamp { index: 1, .. })
        ));
        let (s, n) = parse_evm_sorted(&b).unwrap();
        assert_eq!(n, 1);
        assert_eq!(s.events()[0].t, 10);
    }

    #[test]
    fn invalid_polarity_byte() {
        let mut b = header(346, 260, 1);
        b.extend(record(1, 1, 5, 0));
        assert!(matches!(
            parse_evm(&b),
            Err(EventError::InvalidPolarity { .. })
        ));
    }

    #[test]
    fn write_lengths() {
        assert_eq!(write_evm(&EventStream::empty(davis())).len(), 16);
        let s = EventStream::new(
            davis(),
            (0..3).map(|i| Event::new(i, i, i as u64, Polarity::On)).collect(),
        )
        .unwrap();
        assert_eq!(write_evm(&s).len(), 16 + 3 * 14);
    }

    #[test]
    fn csv_polarity_mapping_and_errors() {
        let s = parse_csv("10,20,1000,1", davis()).unwrap();
        assert_eq!(s.events()[0].p, Polarity::On);
        let s = parse_csv("10,20,1000,0", davis()).unwrap();
        assert_eq!(s.events()[0].p, Polarity::Off);
        let s = parse_csv("x,y,t,p\n10,20,1000,-1\n", davis()).unwrap();
        assert_eq!(s.events()[0].p, Polarity::Off);
        assert_eq!(
            parse_csv("10,20,abc,1", davis()),
            Err(EventError::MalformedLine(1))
        );
        assert_eq!(
            parse_csv("1,1,1,1\n1,1,2,5", davis()),
            Err(EventError::MalformedLine(2))
        );
        assert!(matches!(
            parse_csv("999,1,1,1", davis()),
            Err(EventError::OutOfBoundsEvent { .. })
        ));
    }

    #[test]
    fn slice_boundaries() {
        let s = EventStream::new(
            davis(),
            [0, 33000, 66000]
                .iter()
                .map(|&t| Event::new(0, 0, t, Polarity::On))
                .collect(),
        )
        .unwrap();
        let a = slice(&s, 0, 33000).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.events()[0].t, 0);
        assert!(slice(&s, 70000, 80000).unwrap().is_empty());
        assert!(matches!(
            slice(&s, 5, 5),
            Err(EventError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn geometry_must_be_positive() {
        assert!(SensorGeometry::new(0, 10, "x").is_err());
        assert_eq!(SensorGeometry::evk4().width(), 1280);
    }
}
