//! Append-only template/delta record buffer.
//!
//! The arena holds two record kinds:
//!
//! ```text
//! TEMPLATE  [0b0LLL_LLLL]                 header = message length - 1, then the message bytes
//! DELTA     [0b1TTT_TTTT][N]{[off][len][bytes..]}xN
//!                                         T = template index, N spans patched onto the template
//! ```
//!
//! A delta always reconstructs a message of the same length as its template.
//! Bytes already written to the arena are never modified, so the arena can be
//! dumped onto a connection as-is and decoded by a reader that rebuilds its own
//! template list while scanning.

use thiserror::Error;

use crate::wire::MAX_MESSAGE_LEN;

pub const MAX_TEMPLATES: usize = 128;
const DELTA_FLAG: u8 = 0x80;
/// Equal-byte runs of at most this length between two differing runs are
/// absorbed into a single span.
const SPAN_MERGE_GAP: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordStoreError {
    #[error("message length {0} outside 1..={MAX_MESSAGE_LEN}")]
    MessageSize(usize),
    #[error("arena full: record needs {needed} bytes, {free} free")]
    Capacity { needed: usize, free: usize },
    #[error("template table full ({MAX_TEMPLATES} templates)")]
    TemplateLimit,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordDecodeError {
    #[error("record truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("span at offset {offset} exceeds template length {template_len}")]
    SpanOutOfBounds { offset: usize, template_len: usize },
    #[error("template table overflow at offset {offset}")]
    TooManyTemplates { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecordStoreStats {
    pub raw_bytes: usize,
    pub stored_bytes: usize,
    pub record_count: usize,
    pub template_count: usize,
}

impl RecordStoreStats {
    pub fn ratio(&self) -> f64 {
        if self.stored_bytes == 0 {
            1.0
        } else {
            self.raw_bytes as f64 / self.stored_bytes as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TemplateRef {
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct RecordStore {
    arena: Vec<u8>,
    capacity: usize,
    templates: Vec<TemplateRef>,
    record_ends: Vec<usize>,
    raw_bytes: usize,
}

/// Differing byte ranges `(start, end)` between two equal-length messages.
fn diff_spans(template: &[u8], msg: &[u8]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < msg.len() {
        if template[i] == msg[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < msg.len() && template[i] != msg[i] {
            i += 1;
        }
        match spans.last_mut() {
            Some(last) if start - last.1 <= SPAN_MERGE_GAP => last.1 = i,
            _ => spans.push((start, i)),
        }
    }
    spans
}

fn delta_size(spans: &[(usize, usize)]) -> usize {
    2 + spans.iter().map(|(s, e)| 2 + (e - s)).sum::<usize>()
}

impl RecordStore {
    pub fn new(capacity_bytes: usize) -> Self {
        RecordStore {
            arena: Vec::with_capacity(capacity_bytes),
            capacity: capacity_bytes,
            templates: Vec::new(),
            record_ends: Vec::new(),
            raw_bytes: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn free(&self) -> usize {
        self.capacity - self.arena.len()
    }

    pub fn len(&self) -> usize {
        self.record_ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ends.is_empty()
    }

    pub fn template_count(&self) -> usize {
        self.templates.len()
    }

    pub fn stats(&self) -> RecordStoreStats {
        RecordStoreStats {
            raw_bytes: self.raw_bytes,
            stored_bytes: self.arena.len(),
            record_count: self.record_ends.len(),
            template_count: self.templates.len(),
        }
    }

    /// Appends one message, returning the number of arena bytes consumed.
    pub fn append(&mut self, msg: &[u8]) -> Result<usize, RecordStoreError> {
        if msg.is_empty() || msg.len() > MAX_MESSAGE_LEN {
            return Err(RecordStoreError::MessageSize(msg.len()));
        }
        let template = self
            .templates
            .iter()
            .enumerate()
            .rev()
            .find(|(_, t)| t.len == msg.len());

        if let Some((index, t)) = template {
            let base = &self.arena[t.offset..t.offset + t.len];
            let spans = diff_spans(base, msg);
            let size = delta_size(&spans);
            if size < msg.len() + 1 {
                self.reserve(size)?;
                self.arena.push(DELTA_FLAG | index as u8);
                self.arena.push(spans.len() as u8);
                for (start, end) in spans {
                    self.arena.push(start as u8);
                    self.arena.push((end - start) as u8);
                    self.arena.extend_from_slice(&msg[start..end]);
                }
                return Ok(self.commit(msg.len()));
            }
        }

        if self.templates.len() >= MAX_TEMPLATES {
            return Err(RecordStoreError::TemplateLimit);
        }
        self.reserve(msg.len() + 1)?;
        self.arena.push((msg.len() - 1) as u8);
        self.templates.push(TemplateRef {
            offset: self.arena.len(),
            len: msg.len(),
        });
        self.arena.extend_from_slice(msg);
        Ok(self.commit(msg.len()))
    }

    fn reserve(&self, needed: usize) -> Result<(), RecordStoreError> {
        if needed > self.free() {
            Err(RecordStoreError::Capacity {
                needed,
                free: self.free(),
            })
        } else {
            Ok(())
        }
    }

    fn commit(&mut self, raw: usize) -> usize {
        let start = self.record_ends.last().copied().unwrap_or(0);
        self.record_ends.push(self.arena.len());
        self.raw_bytes += raw;
        self.arena.len() - start
    }

    /// The arena bytes, verbatim.
    pub fn dump(&self) -> &[u8] {
        &self.arena
    }

    /// Each record's bytes in append order; concatenated they equal [`dump`](Self::dump).
    pub fn records(&self) -> impl Iterator<Item = &[u8]> + '_ {
        let mut start = 0;
        self.record_ends.iter().map(move |&end| {
            let r = &self.arena[start..end];
            start = end;
            r
        })
    }

    pub fn clear(&mut self) {
        self.arena.clear();
        self.templates.clear();
        self.record_ends.clear();
        self.raw_bytes = 0;
    }
}

/// Outcome of decoding a record one at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordOutcome {
    Message(Vec<u8>),
    /// A delta that names a template this decoder never saw.
    UnknownTemplate(u8),
}

/// Reader-side template table; decodes records in arena order.
#[derive(Debug, Default, Clone)]
pub struct RecordDecoder {
    templates: Vec<Vec<u8>>,
}

impl RecordDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Length of the record starting at `bytes[0]`, if enough bytes are present.
    fn record_len(bytes: &[u8]) -> Option<usize> {
        let header = *bytes.first()?;
        if header & DELTA_FLAG == 0 {
            return Some(header as usize + 2);
        }
        let spans = *bytes.get(1)? as usize;
        let mut pos = 2;
        for _ in 0..spans {
            let len = *bytes.get(pos + 1)? as usize;
            pos += 2 + len;
        }
        Some(pos)
    }

    /// Decodes the record at the start of `bytes`, returning it and its length.
    /// `base` is the record's offset in the enclosing stream, used in errors.
    pub fn decode_next(
        &mut self,
        bytes: &[u8],
        base: usize,
    ) -> Result<(RecordOutcome, usize), RecordDecodeError> {
        let len = Self::record_len(bytes)
            .filter(|&l| l <= bytes.len())
            .ok_or(RecordDecodeError::Truncated { offset: base })?;
        let header = bytes[0];
        if header & DELTA_FLAG == 0 {
            if self.templates.len() >= MAX_TEMPLATES {
                return Err(RecordDecodeError::TooManyTemplates { offset: base });
            }
            let msg = bytes[1..len].to_vec();
            self.templates.push(msg.clone());
            return Ok((RecordOutcome::Message(msg), len));
        }
        let index = header & !DELTA_FLAG;
        let Some(template) = self.templates.get(index as usize) else {
            return Ok((RecordOutcome::UnknownTemplate(index), len));
        };
        let mut msg = template.clone();
        let mut pos = 2;
        while pos < len {
            let off = bytes[pos] as usize;
            let span = bytes[pos + 1] as usize;
            if off + span > msg.len() {
                return Err(RecordDecodeError::SpanOutOfBounds {
                    offset: base + pos,
                    template_len: msg.len(),
                });
            }
            msg[off..off + span].copy_from_slice(&bytes[pos + 2..pos + 2 + span]);
            pos += 2 + span;
        }
        Ok((RecordOutcome::Message(msg), len))
    }

    /// Decodes a record that must occupy all of `bytes` (one record per frame).
    pub fn decode_record(&mut self, bytes: &[u8]) -> Result<RecordOutcome, RecordDecodeError> {
        let (outcome, len) = self.decode_next(bytes, 0)?;
        if len != bytes.len() {
            return Err(RecordDecodeError::Truncated { offset: len });
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecodedDump {
    pub messages: Vec<Vec<u8>>,
    pub dropped: usize,
    pub error: Option<RecordDecodeError>,
}

/// Decodes a complete dump. Stops at the first malformed record, keeping the
/// messages decoded before it.
pub fn decode_dump(bytes: &[u8]) -> DecodedDump {
    let mut decoder = RecordDecoder::new();
    let mut out = DecodedDump::default();
    let mut pos = 0;
    while pos < bytes.len() {
        match decoder.decode_next(&bytes[pos..], pos) {
            Ok((RecordOutcome::Message(m), len)) => {
                out.messages.push(m);
                pos += len;
            }
            Ok((RecordOutcome::UnknownTemplate(_), len)) => {
                out.dropped += 1;
                pos += len;
            }
            Err(e) => {
                out.error = Some(e);
                break;
            }
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("program size {program_bytes} leaves no room in {ram_bytes} bytes of RAM")]
pub struct SizingError {
    pub ram_bytes: usize,
    pub program_bytes: usize,
}

/// Uncompressed buffer capacity in messages: `floor((ram - program) / avg_msg)`.
pub fn max_messages(
    ram_bytes: usize,
    program_bytes: usize,
    avg_msg_bytes: usize,
) -> Result<usize, SizingError> {
    if program_bytes >= ram_bytes || avg_msg_bytes == 0 {
        return Err(SizingError {
            ram_bytes,
            program_bytes,
        });
    }
    Ok((ram_bytes - program_bytes) / avg_msg_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_append_is_template() {
        let mut s = RecordStore::new(1024);
        assert_eq!(s.append(&[7u8; 20]).unwrap(), 21);
        assert_eq!(s.dump()[0], 19);
        assert_eq!(s.dump().len(), 21);
    }

    #[test]
    fn identical_message_costs_two_bytes() {
        let mut s = RecordStore::new(1024);
        s.append(b"hello world").unwrap();
        assert_eq!(s.append(b"hello world").unwrap(), 2);
        assert_eq!(&s.dump()[12..], &[0x80, 0x00]);
    }

    #[test]
    fn repetition_cost() {
        for k in 1..20usize {
            let mut s = RecordStore::new(4096);
            for _ in 0..k {
                s.append(&[3u8; 20]).unwrap();
            }
            assert_eq!(s.stats().stored_bytes, 21 + 2 * (k - 1));
        }
    }

    #[test]
    fn decode_fixed_example() {
        let bytes = [0x02, b'a', b'b', b'c', 0x80, 0x01, 0x01, 0x01, b'x'];
        let out = decode_dump(&bytes);
        assert_eq!(out.messages, vec![b"abc".to_vec(), b"axc".to_vec()]);
        assert_eq!(out.error, None);
    }

    #[test]
    fn unknown_template_dropped() {
        let bytes = [0x02, b'a', b'b', b'c', 0x85, 0x00];
        let out = decode_dump(&bytes);
        assert_eq!(out.messages, vec![b"abc".to_vec()]);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn span_beyond_template_is_error() {
        let bytes = [0x02, b'a', b'b', b'c', 0x80, 0x01, 0x02, 0x02, b'x', b'y'];
        let out = decode_dump(&bytes);
        assert_eq!(out.messages.len(), 1);
        assert!(matches!(
            out.error,
            Some(RecordDecodeError::SpanOutOfBounds { offset: 6, .. })
        ));
    }

    #[test]
    fn gap_merge_threshold() {
        let t = [0u8; 10];
        // gap of exactly 2 equal bytes merges
        let mut m = t;
        m[1] = 1;
        m[4] = 1;
        assert_eq!(diff_spans(&t, &m), vec![(1, 5)]);
        // gap of 3 does not
        m[4] = 0;
        m[5] = 1;
        assert_eq!(diff_spans(&t, &m), vec![(1, 2), (5, 6)]);
    }

    #[test]
    fn delta_tie_prefers_template() {
        // 4-byte message entirely different: delta = 2 + 2 + 4 = 8 >= 5
        let mut s = RecordStore::new(64);
        s.append(&[0, 0, 0, 0]).unwrap();
        assert_eq!(s.append(&[1, 1, 1, 1]).unwrap(), 5);
        assert_eq!(s.template_count(), 2);
        // 1-byte message, one byte differs: delta 2+2+1 = 5 >= 2 -> template
        let mut s = RecordStore::new(64);
        s.append(&[0]).unwrap();
        s.append(&[1]).unwrap();
        assert_eq!(s.template_count(), 2);
    }

    #[test]
    fn most_recent_same_length_template() {
        let mut s = RecordStore::new(1024);
        s.append(&[1u8; 8]).unwrap();
        s.append(&[9u8; 5]).unwrap();
        s.append(&[2u8; 8]).unwrap();
        s.append(&[2u8; 8]).unwrap();
        let last = s.records().last().unwrap();
        assert_eq!(last, &[0x82, 0x00]);
    }

    #[test]
    fn size_and_capacity_errors() {
        let mut s = RecordStore::new(30);
        assert_eq!(s.append(&[]), Err(RecordStoreError::MessageSize(0)));
        assert_eq!(
            s.append(&[0u8; 129]),
            Err(RecordStoreError::MessageSize(129))
        );
        s.append(&[0u8; 20]).unwrap();
        assert_eq!(
            s.append(&[1u8; 10]),
            Err(RecordStoreError::Capacity {
                needed: 11,
                free: 9
            })
        );
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn template_limit() {
        let mut s = RecordStore::new(1 << 16);
        for i in 0..MAX_TEMPLATES {
            s.append(&[i as u8, !(i as u8), i as u8 ^ 0x55]).unwrap();
        }
        assert_eq!(s.append(&[0xEE; 7]), Err(RecordStoreError::TemplateLimit));
    }

    #[test]
    fn clear_resets_templates() {
        let mut s = RecordStore::new(256);
        s.append(b"abcd").unwrap();
        s.append(b"abce").unwrap();
        s.clear();
        assert!(s.dump().is_empty());
        assert_eq!(s.stats(), RecordStoreStats::default());
        s.append(b"sensor-01").unwrap();
        s.append(b"sensor-02").unwrap();
        assert_eq!(s.records().nth(1).unwrap()[0], 0x80);
    }

    #[test]
    fn records_concatenate_to_dump() {
        let mut s = RecordStore::new(512);
        for i in 0..20u8 {
            s.append(&[i / 3, 1, 2, 3, i]).unwrap();
        }
        assert_eq!(s.records().collect::<Vec<_>>().concat(), s.dump());
    }

    #[test]
    fn sizing_arithmetic() {
        assert_eq!(max_messages(16384, 2416, 29), Ok(481));
        assert_eq!(max_messages(100, 0, 100), Ok(1));
        assert_eq!(max_messages(16384, 2416, 20), Ok(698));
        assert!(max_messages(100, 100, 1).is_err());
    }

    fn messages() -> impl Strategy<Value = Vec<Vec<u8>>> {
        // a few lengths and a small alphabet so templates get reused
        let msg = prop::sample::select(vec![1usize, 2, 8, 20, 21, 128])
            .prop_flat_map(|len| prop::collection::vec(0u8..4, len));
        prop::collection::vec(msg, 0..60)
    }

    proptest! {
        #[test]
        fn dump_round_trip(msgs in messages()) {
            let mut s = RecordStore::new(1 << 16);
            for m in &msgs {
                s.append(m).unwrap();
            }
            let out = decode_dump(s.dump());
            prop_assert_eq!(out.error, None);
            prop_assert_eq!(out.dropped, 0);
            prop_assert_eq!(out.messages, msgs.clone());
            let st = s.stats();
            prop_assert!(st.stored_bytes <= st.raw_bytes + st.record_count);
        }

        #[test]
        fn truncated_dump_yields_whole_record_prefix(msgs in messages(), cut in any::<prop::sample::Index>()) {
            let mut s = RecordStore::new(1 << 16);
            for m in &msgs {
                s.append(m).unwrap();
            }
            let dump = s.dump();
            prop_assume!(!dump.is_empty());
            let cut = cut.index(dump.len() + 1);
            let whole = s.records().scan(0, |end, r| { *end += r.len(); Some(*end) })
                .filter(|&end| end <= cut).count();
            let out = decode_dump(&dump[..cut]);
            prop_assert_eq!(&out.messages[..], &msgs[..whole]);
            prop_assert_eq!(out.error.is_some(), !s.records().scan(0, |e, r| { *e += r.len(); Some(*e) }).any(|e| e == cut) && cut != 0);
        }
    }
}
