//! Incremental parser for control-tag structured model output.
//!
//! Converts a stream of text deltas into thinking-mode-tagged segments and
//! think-block boundaries. Tags may arrive split across arbitrary chunk
//! boundaries; the parser holds back any suffix that could still become a
//! tag and flushes it as literal text on finalize.

use serde::{Deserialize, Serialize};

/// The four thinking modes. `Default` covers text before the first control tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ThinkingMode {
    Default,
    Low,
    Mid,
    High,
}

impl ThinkingMode {
    /// The opening tag literal for this mode; empty for `Default`.
    pub fn tag_literal(self) -> &'static str {
        match self {
            ThinkingMode::Default => "",
            ThinkingMode::Low => TAG_LOW,
            ThinkingMode::Mid => TAG_MID,
            ThinkingMode::High => TAG_HIGH,
        }
    }
}

pub const TAG_LOW: &str = "<TEMP_LOW>";
pub const TAG_MID: &str = "<TEMP_MID>";
pub const TAG_HIGH: &str = "<TEMP_HIGH>";
pub const TAG_THINK_OPEN: &str = "<think>";
pub const TAG_THINK_CLOSE: &str = "</think>";

/// All literals the streaming parser recognizes.
const RECOGNIZED: [&str; 5] = [TAG_LOW, TAG_MID, TAG_HIGH, TAG_THINK_OPEN, TAG_THINK_CLOSE];

/// A maximal run of text governed by one thinking mode.
///
/// `text` never contains a complete control tag (think-tag literals stay in
/// the text so segments reassemble byte-for-byte). `token_count` is filled
/// by the decode orchestrator; 0 until counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSegment {
    pub mode: ThinkingMode,
    pub text: String,
    /// Characters into the full reassembled output where this segment's
    /// opening tag (or text, for `Default`) begins.
    pub start_offset: usize,
    pub token_count: usize,
    /// Whether a `<think>` block was open when this segment started.
    pub in_think: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParserEvent {
    SegmentStart(ThinkingMode),
    Text(String),
    ThinkOpen,
    ThinkClose,
    End,
}

/// Streaming parser. One instance per stream; not safe for concurrent
/// mutation but freely movable across threads.
#[derive(Debug, Default)]
pub struct StreamParser {
    pending: String,
    started: bool,
    think_open: bool,
    finalized: bool,
}

impl StreamParser {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed a chunk; returns events for everything unambiguously classifiable.
    ///
    /// Panics if the parser was already finalized.
    pub fn feed(&mut self, chunk: &str) -> Vec<ParserEvent> {
        assert!(!self.finalized, "feed after finalize");
        if chunk.is_empty() && self.pending.is_empty() {
            return Vec::new();
        }
        self.pending.push_str(chunk);
        let buf = std::mem::take(&mut self.pending);
        let mut events = Vec::new();
        let mut run = String::new(); // accumulated literal text not yet emitted
        let mut i = 0;

        while let Some(rel) = buf[i..].find('<') {
            let at = i + rel;
            run.push_str(&buf[i..at]);
            let rest = &buf[at..];
            if let Some(lit) = RECOGNIZED.iter().find(|lit| rest.starts_with(**lit)) {
                match *lit {
                    TAG_THINK_OPEN => {
                        self.flush_text(&mut events, &mut run);
                        if !self.think_open {
                            self.think_open = true;
                            self.ensure_started(&mut events);
                            events.push(ParserEvent::ThinkOpen);
                        }
                        // literal stays in the text for reconstruction
                        run.push_str(TAG_THINK_OPEN);
                    }
                    TAG_THINK_CLOSE => {
                        run.push_str(TAG_THINK_CLOSE);
                        self.flush_text(&mut events, &mut run);
                        if self.think_open {
                            self.think_open = false;
                            events.push(ParserEvent::ThinkClose);
                        }
                    }
                    tag => {
                        self.flush_text(&mut events, &mut run);
                        let mode = match tag {
                            TAG_LOW => ThinkingMode::Low,
                            TAG_MID => ThinkingMode::Mid,
                            _ => ThinkingMode::High,
                        };
                        events.push(ParserEvent::SegmentStart(mode));
                        self.started = true;
                    }
                }
                i = at + lit.len();
            } else if RECOGNIZED.iter().any(|lit| lit.starts_with(rest)) {
                // proper prefix of a tag: hold back until disambiguated
                self.pending = rest.to_string();
                i = buf.len();
                break;
            } else {
                // '<' that cannot start a recognized tag is literal text
                run.push('<');
                i = at + 1;
            }
        }
        if i < buf.len() {
            run.push_str(&buf[i..]);
        }
        self.flush_text(&mut events, &mut run);
        events
    }

    /// Flush any held-back partial tag as literal text and emit `End`.
    pub fn finalize(&mut self) -> Vec<ParserEvent> {
        assert!(!self.finalized, "finalize called twice");
        self.finalized = true;
        let mut events = Vec::new();
        if !self.pending.is_empty() {
            let mut run = std::mem::take(&mut self.pending);
            self.flush_text(&mut events, &mut run);
        }
        events.push(ParserEvent::End);
        events
    }

    fn ensure_started(&mut self, events: &mut Vec<ParserEvent>) {
        if !self.started {
            self.started = true;
            events.push(ParserEvent::SegmentStart(ThinkingMode::Default));
        }
    }

    fn flush_text(&mut self, events: &mut Vec<ParserEvent>, run: &mut String) {
        if !run.is_empty() {
            self.ensure_started(events);
            events.push(ParserEvent::Text(std::mem::take(run)));
        }
    }
}

/// Folds parser events into ordered [`TaggedSegment`]s with char offsets.
#[derive(Debug, Default)]
pub struct SegmentCollector {
    segments: Vec<TaggedSegment>,
    current: Option<TaggedSegment>,
    chars: usize,
    think_open: bool,
}

impl SegmentCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: &ParserEvent) {
        match event {
            ParserEvent::SegmentStart(mode) => {
                if let Some(seg) = self.current.take() {
                    self.segments.push(seg);
                }
                let start = self.chars;
                self.chars += mode.tag_literal().chars().count();
                self.current = Some(TaggedSegment {
                    mode: *mode,
                    text: String::new(),
                    start_offset: start,
                    token_count: 0,
                    in_think: self.think_open,
                });
            }
            ParserEvent::Text(delta) => {
                self.chars += delta.chars().count();
                if let Some(seg) = self.current.as_mut() {
                    seg.text.push_str(delta);
                }
            }
            ParserEvent::ThinkOpen => self.think_open = true,
            ParserEvent::ThinkClose => self.think_open = false,
            ParserEvent::End => {}
        }
    }

    pub fn finish(mut self) -> Vec<TaggedSegment> {
        if let Some(seg) = self.current.take() {
            self.segments.push(seg);
        }
        self.segments
    }
}

/// Non-streaming convenience form: feed the whole string, then finalize.
pub fn segment(text: &str) -> Vec<TaggedSegment> {
    let mut parser = StreamParser::new();
    let mut collector = SegmentCollector::new();
    for ev in parser.feed(text) {
        collector.push(&ev);
    }
    for ev in parser.finalize() {
        collector.push(&ev);
    }
    collector.finish()
}

/// Reassemble the original stream from segments: opening tag literal
/// (empty for `Default`) followed by the segment text, in order.
pub fn reconstruct(segments: &[TaggedSegment]) -> String {
    let mut out = String::new();
    for seg in segments {
        out.push_str(seg.mode.tag_literal());
        out.push_str(&seg.text);
    }
    out
}

/// Strip `<think>…</think>` regions, returning only the visible text.
/// An unclosed block extends to the end of the string.
pub fn strip_think(text: &str) -> String {
    let mut out = String::new();
    let mut rest = text;
    while let Some(open) = rest.find(TAG_THINK_OPEN) {
        out.push_str(&rest[..open]);
        let after = &rest[open + TAG_THINK_OPEN.len()..];
        match after.find(TAG_THINK_CLOSE) {
            Some(close) => rest = &after[close + TAG_THINK_CLOSE.len()..],
            None => return out,
        }
    }
    out.push_str(rest);
    out
}

/// True if the text contains any complete control tag.
pub fn contains_control_tag(text: &str) -> bool {
    text.contains(TAG_LOW) || text.contains(TAG_MID) || text.contains(TAG_HIGH)
}
