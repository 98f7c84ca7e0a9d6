mod common;

use candle_core::DType;
use common::*;
use posterkit::design::codec::{format_instruction, parse_design, serialize_design, SerializedDesign, SpanTag};
use posterkit::design::data::{read_jsonl, write_jsonl};
use posterkit::design::{sample_design, DecodeConfig, DecodeMode, Token};
use posterkit::synth::design_examples;
use proptest::prelude::*;
use rand::SeedableRng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_then_parse_is_identity(seed in any::<u64>(), n in 1usize..=8) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = random_design(&mut r, n);
        let s = serialize_design(&d).unwrap();
        prop_assert_eq!(s.tokens.len(), s.span_map.len());
        prop_assert_eq!(parse_design(&s, n).unwrap(), d);
    }
}

#[test]
fn span_map_tags_each_element() {
    let d = random_design(&mut rng(1), 4);
    let s = serialize_design(&d).unwrap();
    for (t, tag) in s.tokens.iter().zip(&s.span_map) {
        let expected = match t {
            Token::Color(_) | Token::Texture(_) => SpanTag::Bg,
            Token::Index(_) => SpanTag::Txt,
            Token::BoxProduct | Token::BoxText | Token::Bin(_) => SpanTag::Lay,
            _ => SpanTag::Delim,
        };
        assert_eq!(*tag, expected, "{t}");
    }
}

#[test]
fn truncated_sequences_report_their_end() {
    let d = random_design(&mut rng(2), 3);
    let s = serialize_design(&d).unwrap();
    for cut in 1..s.len() {
        let short = SerializedDesign::from_tokens(s.tokens[..cut].to_vec());
        assert!(parse_design(&short, 3).is_err());
    }
}

#[test]
fn dataset_records_round_trip_through_jsonl() {
    let data = design_examples(&mut rng(3), 0..50, 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_jsonl(&path, &data).unwrap();
    assert_eq!(read_jsonl::<posterkit::design::DesignExample>(&path).unwrap(), data);
}

#[test]
fn sampled_designs_are_valid_under_temperature() {
    let policy = tiny_policy(4, DType::F32);
    let cands = candidates(&["SALE", "GIFT", "HOT", "NEW IN"]);
    let instr = format_instruction(&cands).unwrap();
    for seed in 0..20 {
        let cfg = DecodeConfig { mode: DecodeMode::Temperature, temperature: 1.5, seed, ..Default::default() };
        let d = sample_design(&policy, 3, &instr, cands.len(), &cfg).unwrap();
        d.validate(Some(cands.len())).unwrap();
    }
}
