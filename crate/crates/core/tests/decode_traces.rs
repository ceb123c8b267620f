//! Head-synchronous decoding against hand-worked traces.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use mcmma::decode::{
    decode_sequence, read_trace_records, DecodePolicy, EndOfInput, ForcedPosition, MatrixModel,
    Termination,
};
use mcmma::io::parse_probabilities;
use mcmma::metrics::boundary_spread;
use mcmma::Matrix;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn two_heads() -> MatrixModel {
    let text = fs::read_to_string(fixture("two-heads.csv")).unwrap();
    MatrixModel::new(parse_probabilities(&text).unwrap()).unwrap()
}

fn policy(epsilon: usize, forced_position: ForcedPosition) -> DecodePolicy {
    DecodePolicy {
        forced_position,
        ..DecodePolicy::with_epsilon(epsilon)
    }
}

#[test]
fn matches_golden_traces() {
    let cases = [
        ("two-heads.unsync.jsonl", DecodePolicy::unsynchronized(), usize::MAX),
        ("two-heads.eps0.rightmost.jsonl", policy(0, ForcedPosition::RightmostSelected), 0),
        ("two-heads.eps1.rightmost.jsonl", policy(1, ForcedPosition::RightmostSelected), 1),
        ("two-heads.eps2.rightmost.jsonl", policy(2, ForcedPosition::RightmostSelected), 2),
        ("two-heads.eps1.right_bound.jsonl", policy(1, ForcedPosition::RightBound), 1),
        ("two-heads.eps1.argmax.jsonl", policy(1, ForcedPosition::ArgmaxInWindow), 1),
    ];
    for (name, pol, eps) in cases {
        let trace = decode_sequence(&mut two_heads(), &pol, 10).unwrap();
        let golden = fs::read_to_string(fixture(name)).unwrap();
        assert_eq!(trace.to_jsonl(), golden, "{name}");
        assert_eq!(trace.termination, Termination::MaxLength);
        assert_eq!(trace.violations(eps), (0, 0), "{name}");

        let records = read_trace_records(BufReader::new(golden.as_bytes())).unwrap();
        for (rec, step) in records.iter().zip(&trace.steps) {
            assert_eq!(rec.spread, step.spread());
            assert!(rec.spread <= eps);
        }
    }
}

#[test]
fn silent_heads_follow_end_of_input_policy() {
    let quiet = vec![Matrix::from_fn(2, 5, |_, _| 0.1); 2];
    let forced = decode_sequence(&mut MatrixModel::new(quiet.clone()).unwrap(), &DecodePolicy::with_epsilon(1), 5).unwrap();
    assert_eq!(forced.steps.len(), 2);
    for step in &forced.steps {
        assert_eq!(step.boundaries(), vec![5, 5]);
        assert!(step.heads.iter().all(|h| h.forced));
    }

    let emit_end = DecodePolicy {
        end_of_input: EndOfInput::EmitEnd,
        ..DecodePolicy::with_epsilon(1)
    };
    let stopped = decode_sequence(&mut MatrixModel::new(quiet).unwrap(), &emit_end, 5).unwrap();
    assert!(stopped.steps.is_empty());
    assert_eq!(stopped.termination, Termination::InputExhausted);
}

fn heads_strategy() -> impl Strategy<Value = (Vec<Matrix>, usize)> {
    (1usize..5, 1usize..6, 1usize..20, 0usize..6).prop_flat_map(|(m, l, t, eps)| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, l * t), m).prop_map(move |heads| {
            let mats = heads
                .into_iter()
                .map(|v| Matrix::from_fn(l, t, |i, j| v[i * t + j]))
                .collect();
            (mats, eps)
        })
    })
}

proptest! {
    #[test]
    fn spread_and_monotonicity_hold((heads, eps) in heads_strategy()) {
        for forced in [ForcedPosition::RightmostSelected, ForcedPosition::ArgmaxInWindow, ForcedPosition::RightBound] {
            let mut model = MatrixModel::new(heads.clone()).unwrap();
            let trace = decode_sequence(&mut model, &policy(eps, forced), 16).unwrap();
            prop_assert_eq!(trace.violations(eps), (0, 0));
            prop_assert!(boundary_spread(&trace).unwrap().max <= eps);
            for s in &trace.steps {
                prop_assert!(s.heads.iter().all(|h| h.boundary >= 1 && h.boundary <= heads[0].cols()));
            }
        }
    }
}
