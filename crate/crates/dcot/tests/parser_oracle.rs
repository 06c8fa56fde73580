//! Streaming parser equivalence against the independent regex oracle,
//! plus property tests for chunking invariance and reconstruction.

mod common;

use common::{oracle_segments, random_chunking, random_tagged_string};
use dcot::tagparse::{reconstruct, segment, ParserEvent, SegmentCollector, StreamParser};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stream_segments(chunks: &[String]) -> (Vec<(dcot::tagparse::ThinkingMode, String, usize)>, Vec<ParserEvent>) {
    let mut parser = StreamParser::new();
    let mut collector = SegmentCollector::new();
    let mut events = Vec::new();
    for chunk in chunks {
        for ev in parser.feed(chunk) {
            collector.push(&ev);
            events.push(ev);
        }
    }
    for ev in parser.finalize() {
        collector.push(&ev);
        events.push(ev);
    }
    let segs = collector
        .finish()
        .into_iter()
        .map(|s| (s.mode, s.text, s.start_offset))
        .collect();
    (segs, events)
}

fn think_balance_ok(events: &[ParserEvent]) -> bool {
    let mut open = 0i64;
    for ev in events {
        match ev {
            ParserEvent::ThinkOpen => open += 1,
            ParserEvent::ThinkClose => open -= 1,
            _ => {}
        }
        if !(0..=1).contains(&open) {
            return false;
        }
    }
    true
}

#[test]
fn randomized_streaming_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..2_000 {
        let s = random_tagged_string(&mut rng, 12);
        let chunks = random_chunking(&mut rng, &s);
        let (streamed, events) = stream_segments(&chunks);
        let expected = oracle_segments(&s);
        assert_eq!(streamed, expected, "case {case}: input {s:?} chunks {chunks:?}");
        let whole = segment(&s);
        assert_eq!(reconstruct(&whole), s, "reconstruction failed for {s:?}");
        assert!(think_balance_ok(&events), "think balance broken for {s:?}");
    }
}

#[test]
fn balanced_think_blocks_close_after_finalize() {
    let mut parser = StreamParser::new();
    let mut events = parser.feed("<think>a</think>b<think>c</think>");
    events.extend(parser.finalize());
    let opens = events.iter().filter(|e| matches!(e, ParserEvent::ThinkOpen)).count();
    let closes = events.iter().filter(|e| matches!(e, ParserEvent::ThinkClose)).count();
    assert_eq!(opens, closes);
}

proptest! {
    #[test]
    fn chunking_invariance(seed in 0u64..u64::MAX) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_tagged_string(&mut rng, 10);
        let chunks = random_chunking(&mut rng, &s);
        let (streamed, _) = stream_segments(&chunks);
        let whole: Vec<_> = segment(&s)
            .into_iter()
            .map(|t| (t.mode, t.text, t.start_offset))
            .collect();
        prop_assert_eq!(streamed, whole);
    }

    #[test]
    fn reconstruction_is_exact(s in "[a-z<>/ THINKEMPLOWIDG_]{0,60}") {
        let segs = segment(&s);
        prop_assert_eq!(reconstruct(&segs), s);
    }
}
