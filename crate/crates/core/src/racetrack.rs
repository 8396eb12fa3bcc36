//! Domain-wall (racetrack) memory.
//!
//! Three views of the same device are provided:
//!
//! * [`Racetrack`]: a bounded tape of domains with fixed access ports and a
//!   shift offset limited by the blank padding at each end.
//! * [`InputTrackChain`]: the circular input buffer built from chained
//!   segments. Each segment holds 16 bit-plane tracks (one bit of every
//!   word per track). Every step reads the head word, shifts, and writes the
//!   word coming from the right neighbor into the tail, so domains leaving
//!   the head are consumed rather than stored in padding.
//! * [`WeightTrackGroup`]: the stationary weight store of one MAC engine,
//!   advanced one weight per access and rewound after each pass.
//!
//! Only single-position overshift is modeled. Both error-detection schemes
//! (the rewritten `101` check pattern on input tracks and the fixed
//! alternating pattern on weight tracks) live here.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EventCounts;
use crate::fixedpoint::{FixedQ8_8, WORD_BITS};

/// Default data domains per track.
pub const DEFAULT_TRACK_DOMAINS: usize = 64;
/// Default blank domains at each end of a tape.
pub const DEFAULT_BLANK_PAD: usize = 4;
/// Check pattern kept at the head end of each input track.
pub const INPUT_EDC_PATTERN: [bool; 3] = [true, false, true];
/// Fixed pattern stored at the edge of each weight track.
pub const WEIGHT_EDC_PATTERN: [bool; 5] = [false, true, false, true, false];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RacetrackError {
    #[error("shift to offset {offset} exceeds blank padding of {pad} domains")]
    PadOverrun { offset: i64, pad: usize },
    #[error("port {port} does not permit {access}")]
    PortAccess { port: usize, access: &'static str },
    #[error("port {0} does not exist")]
    NoSuchPort(usize),
    #[error("port position {position} outside data length {len}")]
    PortOutOfRange { position: usize, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortKind {
    Read,
    Write,
    ReadWrite,
}

impl PortKind {
    fn can_read(self) -> bool {
        matches!(self, Self::Read | Self::ReadWrite)
    }
    fn can_write(self) -> bool {
        matches!(self, Self::Write | Self::ReadWrite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub kind: PortKind,
    /// Data domain aligned with the port at offset zero.
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftDirection {
    /// Moves domain `i + 1` under a port that was aligned with domain `i`.
    Left,
    Right,
}

/// A bounded racetrack with blank padding on both ends.
#[derive(Clone, Debug)]
pub struct Racetrack {
    /// `blank_pad` blanks, then the data domains, then `blank_pad` blanks.
    domains: Vec<bool>,
    data_len: usize,
    blank_pad: usize,
    ports: Vec<Port>,
    offset: i64,
}

impl Racetrack {
    pub fn new(data_len: usize, blank_pad: usize, ports: Vec<Port>) -> Result<Self, RacetrackError> {
        if let Some(p) = ports.iter().find(|p| p.position >= data_len) {
            return Err(RacetrackError::PortOutOfRange { position: p.position, len: data_len });
        }
        Ok(Self { domains: vec![false; data_len + 2 * blank_pad], data_len, blank_pad, ports, offset: 0 })
    }

    /// A track with one read-write port at domain 0.
    pub fn with_head(data_len: usize, blank_pad: usize) -> Self {
        Self::new(data_len, blank_pad, vec![Port { kind: PortKind::ReadWrite, position: 0 }])
            .expect("position 0 is in range")
    }

    pub fn data_len(&self) -> usize {
        self.data_len
    }

    pub fn blank_pad(&self) -> usize {
        self.blank_pad
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn ports(&self) -> &[Port] {
        &self.ports
    }

    /// Preload data domains (construction-time initialization, not counted).
    pub fn load(&mut self, bits: &[bool]) {
        let n = bits.len().min(self.data_len);
        self.domains[self.blank_pad..self.blank_pad + n].copy_from_slice(&bits[..n]);
    }

    /// Domain index currently under `port`.
    fn aligned(&self, port: usize) -> Result<usize, RacetrackError> {
        let p = self.ports.get(port).ok_or(RacetrackError::NoSuchPort(port))?;
        let idx = self.blank_pad as i64 + p.position as i64 + self.offset;
        debug_assert!(idx >= 0 && (idx as usize) < self.domains.len());
        Ok(idx as usize)
    }

    /// Shift by one position (two when `overshift` is set).
    pub fn shift(
        &mut self,
        direction: ShiftDirection,
        overshift: bool,
        counts: &mut EventCounts,
    ) -> Result<(), RacetrackError> {
        let step = if overshift { 2 } else { 1 };
        let delta = match direction {
            ShiftDirection::Left => step,
            ShiftDirection::Right => -step,
        };
        let next = self.offset + delta;
        if next.unsigned_abs() as usize > self.blank_pad {
            return Err(RacetrackError::PadOverrun { offset: next, pad: self.blank_pad });
        }
        self.offset = next;
        counts.track_shift += 1;
        Ok(())
    }

    pub fn read(&self, port: usize, counts: &mut EventCounts) -> Result<bool, RacetrackError> {
        let kind = self.ports.get(port).ok_or(RacetrackError::NoSuchPort(port))?.kind;
        if !kind.can_read() {
            return Err(RacetrackError::PortAccess { port, access: "read" });
        }
        let idx = self.aligned(port)?;
        counts.track_read += 1;
        Ok(self.domains[idx])
    }

    /// Shift-based write of `bit` into the domain aligned with `port`.
    pub fn shift_write(&mut self, port: usize, bit: bool, counts: &mut EventCounts) -> Result<(), RacetrackError> {
        let kind = self.ports.get(port).ok_or(RacetrackError::NoSuchPort(port))?.kind;
        if !kind.can_write() {
            return Err(RacetrackError::PortAccess { port, access: "write" });
        }
        let idx = self.aligned(port)?;
        self.domains[idx] = bit;
        counts.track_write += 1;
        Ok(())
    }
}

/// Sixteen tracks striped one bit per track, read as one word per access.
#[derive(Clone, Debug)]
pub struct BitPlaneTracks {
    planes: Vec<Racetrack>,
}

impl BitPlaneTracks {
    pub fn new(words: &[FixedQ8_8], blank_pad: usize) -> Self {
        let planes = (0..WORD_BITS)
            .map(|b| {
                let mut t = Racetrack::with_head(words.len().max(1), blank_pad);
                let bits: Vec<bool> = words.iter().map(|w| w.bit(b)).collect();
                t.load(&bits);
                t
            })
            .collect();
        Self { planes }
    }

    pub fn read_word(&self, counts: &mut EventCounts) -> Result<FixedQ8_8, RacetrackError> {
        let mut bits = 0u16;
        for (b, t) in self.planes.iter().enumerate() {
            bits |= u16::from(t.read(0, counts)?) << b;
        }
        Ok(FixedQ8_8::from_bits(bits))
    }

    pub fn shift(&mut self, direction: ShiftDirection, counts: &mut EventCounts) -> Result<(), RacetrackError> {
        self.planes.iter_mut().try_for_each(|t| t.shift(direction, false, counts))
    }
}

/// One bit-plane track inside a chain segment.
#[derive(Clone, Debug, Default)]
struct PlaneTape {
    /// Front is the domain under the primary read head.
    cells: VecDeque<bool>,
    /// Bit visible to the secondary head after a detected overshift.
    secondary: Option<bool>,
    /// The controller skips this track's next shift.
    suppress_next_shift: bool,
}

/// What happened on one plane during a shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftEffect {
    Normal,
    /// Shift not issued because the track was already aligned.
    Suppressed,
    /// Overshift left uncorrected.
    Overshift,
    /// Overshift detected by the check bit and corrected.
    Corrected,
}

impl PlaneTape {
    fn load(&mut self, bits: impl Iterator<Item = bool>) {
        self.cells.clear();
        self.cells.extend(bits);
        self.secondary = None;
        self.suppress_next_shift = false;
    }

    fn read(&mut self) -> bool {
        match self.secondary.take() {
            Some(bit) => bit,
            None => self.cells.front().copied().unwrap_or(false),
        }
    }

    fn shift(&mut self, overshift: bool, edc: bool) -> ShiftEffect {
        if self.suppress_next_shift {
            self.suppress_next_shift = false;
            return ShiftEffect::Suppressed;
        }
        self.cells.pop_front();
        if !overshift || self.cells.is_empty() {
            return ShiftEffect::Normal;
        }
        let skipped = self.cells.pop_front().unwrap_or(false);
        if edc {
            // Check bit reads 0: take the skipped word from the secondary head
            // and write one position further left; no shift next step.
            self.secondary = Some(skipped);
            self.suppress_next_shift = true;
            ShiftEffect::Corrected
        } else {
            // A blank enters behind the skipped domain; the write head stays put.
            self.cells.push_back(false);
            ShiftEffect::Overshift
        }
    }

    fn write(&mut self, bit: bool) {
        self.cells.push_back(bit);
    }

    /// Bit at logical position `i`, counting a pending secondary-head bit first.
    fn logical(&self, i: usize) -> bool {
        match (self.secondary, i) {
            (Some(bit), 0) => bit,
            (Some(_), _) => self.cells.get(i - 1).copied().unwrap_or(false),
            (None, _) => self.cells.get(i).copied().unwrap_or(false),
        }
    }
}

/// Sixteen bit-plane tracks holding a contiguous run of chain words.
#[derive(Clone, Debug)]
pub struct ChainSegment {
    planes: Vec<PlaneTape>,
    words: usize,
}

impl ChainSegment {
    fn new(words: usize) -> Self {
        Self { planes: vec![PlaneTape::default(); WORD_BITS], words }
    }

    pub fn words(&self) -> usize {
        self.words
    }

    /// Current stored content, head first (diagnostic; not counted).
    pub fn contents(&self) -> Vec<FixedQ8_8> {
        (0..self.words)
            .map(|i| {
                let mut bits = 0u16;
                for (b, p) in self.planes.iter().enumerate() {
                    bits |= u16::from(p.logical(i)) << b;
                }
                FixedQ8_8::from_bits(bits)
            })
            .collect()
    }
}

/// An EDC or fault event observed during a rotation step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneEvent {
    pub segment: usize,
    pub plane: usize,
    pub effect: ShiftEffect,
}

/// Result of one chain rotation step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    /// Word read by each segment's head, broadcast to its tile.
    pub words: Vec<FixedQ8_8>,
    /// Non-normal shift outcomes (overshift, correction, suppression).
    pub events: Vec<PlaneEvent>,
}

/// A circular buffer of words spread over one or more chained segments.
///
/// Segment `g` writes every word it reads into segment `g - 1`; the leftmost
/// segment feeds the rightmost (the mux configuration that closes the ring).
#[derive(Clone, Debug)]
pub struct InputTrackChain {
    segments: Vec<ChainSegment>,
    edc_enabled: bool,
}

impl InputTrackChain {
    /// Build a chain from segment word counts. Empty segments are not allowed.
    pub fn new(segment_words: &[usize], edc_enabled: bool) -> Self {
        assert!(!segment_words.is_empty(), "chain needs at least one segment");
        assert!(segment_words.iter().all(|&w| w > 0), "chain segments must hold at least one word");
        Self { segments: segment_words.iter().map(|&w| ChainSegment::new(w)).collect(), edc_enabled }
    }

    pub fn capacity(&self) -> usize {
        self.segments.iter().map(|s| s.words).sum()
    }

    pub fn segments(&self) -> &[ChainSegment] {
        &self.segments
    }

    pub fn edc_enabled(&self) -> bool {
        self.edc_enabled
    }

    /// Mux selectors: 1 continues into the next segment, 0 closes the chain.
    pub fn mux_config(&self) -> Vec<bool> {
        let n = self.segments.len();
        (0..n).map(|g| g + 1 < n).collect()
    }

    /// Fill the chain with `words` in order. The words arrive from the
    /// producing layer's write-back, which is accounted there.
    pub fn load(&mut self, words: &[FixedQ8_8]) {
        assert_eq!(words.len(), self.capacity(), "chain load size mismatch");
        let mut start = 0;
        for seg in &mut self.segments {
            let chunk = &words[start..start + seg.words];
            for (b, plane) in seg.planes.iter_mut().enumerate() {
                plane.load(chunk.iter().map(|w| w.bit(b)));
            }
            start += seg.words;
        }
    }

    /// Concatenated segment contents (diagnostic).
    pub fn contents(&self) -> Vec<FixedQ8_8> {
        self.segments.iter().flat_map(|s| s.contents()).collect()
    }

    /// One rotation step: read every head, shift every track, write each
    /// segment's tail with the word its right neighbor just read.
    ///
    /// `overshift(segment, plane)` is queried for every track on every step,
    /// whether or not the shift is issued, so the fault trace does not depend
    /// on error-detection settings.
    pub fn rotate_step(
        &mut self,
        mut overshift: impl FnMut(usize, usize) -> bool,
        counts: &mut EventCounts,
    ) -> StepOutput {
        let n = self.segments.len();
        let mut out = StepOutput { words: Vec::with_capacity(n), events: Vec::new() };
        for seg in &mut self.segments {
            let mut bits = 0u16;
            for (b, plane) in seg.planes.iter_mut().enumerate() {
                bits |= u16::from(plane.read()) << b;
            }
            counts.track_read += WORD_BITS as u64;
            out.words.push(FixedQ8_8::from_bits(bits));
        }
        for (g, seg) in self.segments.iter_mut().enumerate() {
            for (b, plane) in seg.planes.iter_mut().enumerate() {
                let fault = overshift(g, b);
                let effect = plane.shift(fault, self.edc_enabled);
                if effect != ShiftEffect::Suppressed {
                    counts.track_shift += 1;
                    if self.edc_enabled {
                        counts.edc_read += 1;
                    }
                }
                if effect != ShiftEffect::Normal {
                    out.events.push(PlaneEvent { segment: g, plane: b, effect });
                }
            }
        }
        for g in 0..n {
            let incoming = out.words[(g + 1) % n];
            let seg = &mut self.segments[g];
            for (b, plane) in seg.planes.iter_mut().enumerate() {
                plane.write(incoming.bit(b));
            }
            counts.track_write += WORD_BITS as u64;
            if self.edc_enabled {
                counts.edc_write += (INPUT_EDC_PATTERN.len() * WORD_BITS) as u64;
            }
        }
        out
    }

    /// Error-free content check; used after a full rotation.
    pub fn is_aligned(&self) -> bool {
        self.segments.iter().all(|s| {
            s.planes.iter().all(|p| p.secondary.is_none() && !p.suppress_next_shift && p.cells.len() == s.words)
        })
    }
}

/// Outcome of a weight access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightOutcome {
    Ok(FixedQ8_8),
    /// A misalignment was detected; the weight is replaced with zero.
    SubstitutedZero,
}

impl WeightOutcome {
    pub fn value(self) -> FixedQ8_8 {
        match self {
            Self::Ok(w) => w,
            Self::SubstitutedZero => FixedQ8_8::ZERO,
        }
    }
}

/// How a weight track returns to its first weight after a pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewindCost {
    /// One single-position shift per stored weight.
    #[default]
    PerWeight,
    /// A fixed number of shifts regardless of length.
    Fixed(u64),
}

impl RewindCost {
    pub fn shifts(self, weights: usize) -> u64 {
        match self {
            Self::PerWeight => weights as u64,
            Self::Fixed(n) => n,
        }
    }
}

/// Weight store for one MAC engine. Weights are laid out in the order the
/// engine consumes them; all bit stripes of one weight sit under the read
/// heads together, so a single-position shift exposes the next weight.
#[derive(Clone, Debug)]
pub struct WeightTrackGroup {
    weights: Vec<FixedQ8_8>,
    next: usize,
    /// Per-bit misalignment, in weights.
    skew: [u8; WORD_BITS],
    /// Stripes whose next shift is withheld after a detected overshift.
    hold_mask: u16,
    edc_enabled: bool,
}

impl WeightTrackGroup {
    pub fn new(weights: Vec<FixedQ8_8>, edc_enabled: bool) -> Self {
        Self { weights, next: 0, skew: [0; WORD_BITS], hold_mask: 0, edc_enabled }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[FixedQ8_8] {
        &self.weights
    }

    /// Slots consumed so far in the current pass.
    pub fn position(&self) -> usize {
        self.next
    }

    fn stored(&self, slot: usize) -> FixedQ8_8 {
        self.weights.get(slot).copied().unwrap_or(FixedQ8_8::ZERO)
    }

    /// Expected EDC bit at a slot (alternating pattern).
    fn edc_bit(slot: usize) -> bool {
        WEIGHT_EDC_PATTERN[slot % 2]
    }

    /// Fetch the next weight. `overshift_mask` selects the bit stripes that
    /// overshift on the shift preceding this access (ignored for the first
    /// access of a pass and for withheld stripes).
    pub fn fetch(&mut self, overshift_mask: u16, counts: &mut EventCounts) -> WeightOutcome {
        let slot = self.next;
        self.next += 1;
        if slot > 0 {
            let shifting = !self.hold_mask;
            let faulty = overshift_mask & shifting;
            if shifting != 0 {
                counts.track_shift += u64::from(shifting.count_ones());
            }
            for b in 0..WORD_BITS {
                if faulty >> b & 1 == 1 {
                    self.skew[b] += 1;
                }
            }
            self.hold_mask = 0;
        }
        counts.track_read += WORD_BITS as u64;
        let mut bits = 0u16;
        let mut misaligned = 0u16;
        for b in 0..WORD_BITS {
            let s = usize::from(self.skew[b]);
            if s > 0 {
                misaligned |= 1 << b;
            }
            bits |= u16::from(self.stored(slot + s).bit(b)) << b;
        }
        if self.edc_enabled {
            counts.edc_read += 1;
            let observed_slot = if misaligned != 0 { slot + 1 } else { slot };
            if Self::edc_bit(observed_slot) != Self::edc_bit(slot) {
                self.skew = [0; WORD_BITS];
                self.hold_mask = misaligned;
                return WeightOutcome::SubstitutedZero;
            }
        }
        WeightOutcome::Ok(FixedQ8_8::from_bits(bits))
    }

    /// Return to the first weight. Adds the rewind shifts to `counts` and
    /// returns how many single-position group shifts were issued.
    pub fn rewind(&mut self, cost: RewindCost, counts: &mut EventCounts) -> u64 {
        let shifts = cost.shifts(self.weights.len());
        counts.track_shift += shifts * WORD_BITS as u64;
        self.next = 0;
        self.skew = [0; WORD_BITS];
        self.hold_mask = 0;
        shifts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(x: f64) -> FixedQ8_8 {
        FixedQ8_8::from_real(x)
    }

    fn words(n: usize) -> Vec<FixedQ8_8> {
        (0..n).map(|i| FixedQ8_8::from_raw((i as i16 * 37) ^ 0x5a5)).collect()
    }

    #[test]
    fn shift_left_exposes_next_word() {
        let (i1, i2, i3) = (q(1.0), q(-2.5), q(0.75));
        let mut counts = EventCounts::default();
        let mut tracks = BitPlaneTracks::new(&[i1, i2, i3], DEFAULT_BLANK_PAD);
        assert_eq!(tracks.read_word(&mut counts).unwrap(), i1);
        tracks.shift(ShiftDirection::Left, &mut counts).unwrap();
        assert_eq!(tracks.read_word(&mut counts).unwrap(), i2);
        tracks.shift(ShiftDirection::Right, &mut counts).unwrap();
        assert_eq!(tracks.read_word(&mut counts).unwrap(), i1);
    }

    #[test]
    fn shift_inverse_and_pad_overrun() {
        let mut c = EventCounts::default();
        let mut t = Racetrack::with_head(8, 2);
        t.shift(ShiftDirection::Left, false, &mut c).unwrap();
        t.shift(ShiftDirection::Right, false, &mut c).unwrap();
        assert_eq!(t.offset(), 0);
        t.shift(ShiftDirection::Right, false, &mut c).unwrap();
        t.shift(ShiftDirection::Right, false, &mut c).unwrap();
        assert_eq!(
            t.shift(ShiftDirection::Right, false, &mut c),
            Err(RacetrackError::PadOverrun { offset: -3, pad: 2 })
        );
        assert_eq!(t.shift(ShiftDirection::Left, true, &mut c), Ok(()));
        assert_eq!(t.offset(), 0);
        assert_eq!(c.track_shift, 5);
    }

    #[test]
    fn full_sweep_visits_every_domain_once() {
        let mut c = EventCounts::default();
        let mut t = Racetrack::with_head(64, 64);
        let bits: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
        t.load(&bits);
        let mut seen = Vec::new();
        for _ in 0..64 {
            seen.push(t.read(0, &mut c).unwrap());
            t.shift(ShiftDirection::Left, false, &mut c).unwrap();
        }
        assert_eq!(seen, bits);
        assert_eq!((c.track_read, c.track_shift), (64, 64));
        // 64 reads + 64 shifts at the default rates
        let e = crate::energy::EnergyTable::default().energy_aj(&c);
        assert_eq!(e, 64 * 390_000 + 64 * 240_000);
    }

    #[test]
    fn write_then_read() {
        let mut c = EventCounts::default();
        let mut t = Racetrack::with_head(16, 4);
        assert!(!t.read(0, &mut c).unwrap());
        t.shift_write(0, true, &mut c).unwrap();
        assert!(t.read(0, &mut c).unwrap());
        assert_eq!(c.track_write, 1);
    }

    #[test]
    fn port_permissions() {
        let mut c = EventCounts::default();
        let ports = vec![
            Port { kind: PortKind::Read, position: 0 },
            Port { kind: PortKind::Write, position: 3 },
        ];
        let mut t = Racetrack::new(8, 2, ports).unwrap();
        assert!(matches!(t.shift_write(0, true, &mut c), Err(RacetrackError::PortAccess { .. })));
        assert!(matches!(t.read(1, &mut c), Err(RacetrackError::PortAccess { .. })));
        assert!(matches!(t.read(5, &mut c), Err(RacetrackError::NoSuchPort(5))));
        t.shift_write(1, true, &mut c).unwrap();
        for _ in 0..3 {
            t.shift(ShiftDirection::Left, false, &mut c).unwrap_or(());
        }
        assert!(Racetrack::new(8, 2, vec![Port { kind: PortKind::Read, position: 8 }]).is_err());
    }

    #[test]
    fn chain_is_circular_buffer() {
        let (a, b, cc) = (q(1.0), q(2.0), q(3.0));
        let mut chain = InputTrackChain::new(&[3], false);
        chain.load(&[a, b, cc]);
        let mut counts = EventCounts::default();
        let seen: Vec<_> = (0..3).map(|_| chain.rotate_step(|_, _| false, &mut counts).words[0]).collect();
        assert_eq!(seen, vec![a, b, cc]);
        assert_eq!(chain.contents(), vec![a, b, cc]);
    }

    #[test]
    fn two_segment_chain_matches_single_track() {
        let w = words(128);
        let mut long = InputTrackChain::new(&[128], false);
        let mut split = InputTrackChain::new(&[64, 64], false);
        long.load(&w);
        split.load(&w);
        assert_eq!(split.mux_config(), vec![true, false]);
        let mut c = EventCounts::default();
        let mut long_seen = Vec::new();
        let mut split_seen = [Vec::new(), Vec::new()];
        for _ in 0..128 {
            long_seen.push(long.rotate_step(|_, _| false, &mut c).words[0]);
            let s = split.rotate_step(|_, _| false, &mut c).words;
            split_seen[0].push(s[0]);
            split_seen[1].push(s[1]);
        }
        // segment 0 sees the same stream as the long track; segment 1 the
        // same stream rotated by 64
        assert_eq!(split_seen[0], long_seen);
        let rotated: Vec<_> = (0..128).map(|k| w[(64 + k) % 128]).collect();
        assert_eq!(split_seen[1], rotated);
        assert_eq!(split.contents(), w);
        assert_eq!(long.contents(), w);
    }

    #[test]
    fn full_rotation_counts() {
        let mut chain = InputTrackChain::new(&[64], false);
        chain.load(&words(64));
        let mut c = EventCounts::default();
        for _ in 0..64 {
            chain.rotate_step(|_, _| false, &mut c);
        }
        // per bit-plane: 64 reads, 64 writes, 64 shifts
        assert_eq!(c.track_read, 64 * 16);
        assert_eq!(c.track_write, 64 * 16);
        assert_eq!(c.track_shift, 64 * 16);
    }

    #[test]
    fn input_edc_corrects_single_overshift() {
        let w = words(10);
        for fault_step in 0..10 {
            let mut chain = InputTrackChain::new(&[10], true);
            chain.load(&w);
            let mut c = EventCounts::default();
            let mut seen = Vec::new();
            let mut events = Vec::new();
            for k in 0..10 {
                let out = chain.rotate_step(|_, plane| k == fault_step && plane == 3, &mut c);
                seen.push(out.words[0]);
                events.extend(out.events);
            }
            assert_eq!(seen, w, "fault at {fault_step}");
            assert_eq!(chain.contents(), w);
            if fault_step < 9 {
                assert_eq!(events[0].effect, ShiftEffect::Corrected);
                assert_eq!(events[1].effect, ShiftEffect::Suppressed);
            }
        }
    }

    #[test]
    fn uncorrected_overshift_skews_remaining_reads() {
        let w = words(6);
        let mut chain = InputTrackChain::new(&[6], false);
        chain.load(&w);
        let mut c = EventCounts::default();
        let mut seen = Vec::new();
        for k in 0..6 {
            seen.push(chain.rotate_step(|_, plane| k == 1 && plane == 0, &mut c).words[0]);
        }
        let bit0 = |x: FixedQ8_8| x.bit(0);
        // reads 0,1 correct; afterwards plane 0 runs one word ahead around
        // the ring, and the skipped word's slot holds a blank
        assert_eq!(seen[..2], w[..2]);
        for k in 2..6 {
            assert_eq!(bit0(seen[k]), bit0(w[(k + 1) % 6]));
            assert_eq!(seen[k].bits() & !1, w[k].bits() & !1);
        }
        let after: Vec<bool> = chain.contents().iter().map(|&x| bit0(x)).collect();
        let expect: Vec<bool> =
            std::iter::once(false).chain([1, 3, 4, 5, 0].iter().map(|&i| bit0(w[i]))).collect();
        assert_eq!(after, expect);
    }

    #[test]
    fn weight_pass_without_faults() {
        let w = words(5);
        let mut g = WeightTrackGroup::new(w.clone(), true);
        let mut c = EventCounts::default();
        let got: Vec<_> = (0..5).map(|_| g.fetch(0, &mut c)).collect();
        assert_eq!(got, w.iter().map(|&x| WeightOutcome::Ok(x)).collect::<Vec<_>>());
        assert_eq!(c.track_shift, 4 * 16);
        assert_eq!(g.rewind(RewindCost::PerWeight, &mut c), 5);
        assert_eq!(g.fetch(0, &mut c), WeightOutcome::Ok(w[0]));
    }

    #[test]
    fn weight_edc_substitutes_zero_and_realigns() {
        let w = words(6);
        let mut g = WeightTrackGroup::new(w.clone(), true);
        let mut c = EventCounts::default();
        let masks = [0, 0, 0xffff, 0xffff, 0, 0];
        let got: Vec<_> = masks.iter().map(|&m| g.fetch(m, &mut c)).collect();
        assert_eq!(got[0], WeightOutcome::Ok(w[0]));
        assert_eq!(got[1], WeightOutcome::Ok(w[1]));
        // overshift between W1 and W2: W2's slot reads zero
        assert_eq!(got[2], WeightOutcome::SubstitutedZero);
        // the next shift is withheld, so the fault drawn for it is masked
        assert_eq!(got[3], WeightOutcome::Ok(w[3]));
        assert_eq!(got[4], WeightOutcome::Ok(w[4]));
        assert_eq!(got[5], WeightOutcome::Ok(w[5]));
    }

    #[test]
    fn weight_overshift_without_edc_persists() {
        let w = words(5);
        let mut g = WeightTrackGroup::new(w.clone(), false);
        let mut c = EventCounts::default();
        let got: Vec<_> = [0, 0xffff, 0, 0, 0].iter().map(|&m| g.fetch(m, &mut c).value()).collect();
        assert_eq!(got, vec![w[0], w[2], w[3], w[4], FixedQ8_8::ZERO]);
        g.rewind(RewindCost::PerWeight, &mut c);
        assert_eq!(g.fetch(0, &mut c).value(), w[0]);
    }

    #[test]
    fn weight_region_fault_touches_only_masked_bits() {
        let w = words(4);
        let mut g = WeightTrackGroup::new(w.clone(), false);
        let mut c = EventCounts::default();
        g.fetch(0, &mut c);
        let got = g.fetch(0x00ff, &mut c).value();
        assert_eq!(got, w[1].splice_bits(w[2], 0x00ff));
    }
}
