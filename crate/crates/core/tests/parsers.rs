//! Replays the fuzz corpus and mutated seeds through every text parser.
//! Each check mirrors the matching fuzz target: no panics, and anything
//! that parses must survive a write/parse round trip unchanged.

use std::fs;
use std::path::PathBuf;

use pgdr::config::{GenSpec, PgdrConfig};
use pgdr::formats::{parse_checkpoint, parse_stream, write_checkpoint, write_stream};
use proptest::prelude::*;

fn check_stream(text: &str) -> bool {
    match parse_stream(text) {
        Ok(s) => {
            assert_eq!(parse_stream(&write_stream(&s)).unwrap(), s);
            true
        }
        Err(_) => false,
    }
}

fn check_checkpoint(text: &str) -> bool {
    match parse_checkpoint(text) {
        Ok(c) => {
            assert_eq!(parse_checkpoint(&write_checkpoint(&c)).unwrap(), c);
            true
        }
        Err(_) => false,
    }
}

fn check_config(text: &str) -> bool {
    match PgdrConfig::parse(text) {
        Ok(c) => {
            assert_eq!(PgdrConfig::parse(&c.to_string()).unwrap(), c);
            true
        }
        Err(_) => false,
    }
}

fn check_gen_spec(text: &str) -> bool {
    match GenSpec::parse(text) {
        Ok(s) => {
            assert_eq!(GenSpec::parse(&s.to_text()).unwrap(), s);
            true
        }
        Err(_) => false,
    }
}

type Check = fn(&str) -> bool;
const TARGETS: [(&str, Check); 4] = [
    ("stream", check_stream),
    ("checkpoint", check_checkpoint),
    ("config", check_config),
    ("gen_spec", check_gen_spec),
];

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let text = String::from_utf8_lossy(&fs::read(&p).unwrap()).into_owned();
            (p.file_name().unwrap().to_string_lossy().into_owned(), text)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn corpus_seeds_parse_and_round_trip() {
    for (target, check) in TARGETS {
        let seeds = corpus(target);
        assert!(!seeds.is_empty(), "{target} corpus is empty");
        for (name, text) in seeds {
            if name.starts_with("seed-") {
                assert!(check(&text), "{target}/{name} does not parse");
            } else {
                check(&text);
            }
        }
    }
}

#[test]
fn hostile_inputs_are_errors_not_panics() {
    let numbers = [
        "nan",
        "inf",
        "-inf",
        "1e400",
        "-0",
        "18446744073709551616",
        "",
        "  ",
    ];
    for (target, check) in TARGETS {
        for (_, seed) in corpus(target) {
            for n in numbers {
                // Replace the value of each leading line in turn.
                for (i, line) in seed.lines().enumerate().take(6) {
                    let replaced = line
                        .split_once('=')
                        .map(|(k, _)| format!("{k}= {n}"))
                        .unwrap_or_else(|| n.to_string());
                    let mut lines: Vec<&str> = seed.lines().collect();
                    lines[i] = &replaced;
                    check(&lines.join("\n"));
                }
            }
            check(&seed[..seed.len() / 3]);
            check(&format!("{seed}\ntrailing"));
        }
        for junk in ["", "\n", "=", "=\n=", "\u{feff}", "# only a comment"] {
            check(junk);
        }
    }
}

#[test]
fn non_finite_values_never_parse() {
    assert!(!check_config("lr = nan\n"));
    assert!(!check_config("w_kd = inf\n"));
    assert!(!check_gen_spec("cluster_stddev = nan\n"));
    let (_, stream) = &corpus("stream")[0];
    let broken = stream.replacen("e0,", "e0,nan,", 1);
    assert!(!check_stream(&broken));
}

#[derive(Debug, Clone)]
enum Edit {
    Delete(usize, usize),
    Insert(usize, String),
    Swap(usize, usize),
}

fn apply(text: &str, edits: &[Edit]) -> String {
    let mut b: Vec<char> = text.chars().collect();
    for e in edits {
        let n = b.len().max(1);
        match e {
            Edit::Delete(at, len) => {
                let s = at % n;
                let end = (s + len).min(b.len());
                if s < end {
                    b.drain(s..end);
                }
            }
            Edit::Insert(at, s) => {
                let at = (at % n).min(b.len());
                b.splice(at..at, s.chars());
            }
            Edit::Swap(i, j) => {
                if !b.is_empty() {
                    let (i, j) = (i % b.len(), j % b.len());
                    b.swap(i, j);
                }
            }
        }
    }
    b.into_iter().collect()
}

fn edit() -> impl Strategy<Value = Edit> {
    prop_oneof![
        (any::<usize>(), 1usize..40).prop_map(|(a, l)| Edit::Delete(a, l)),
        (any::<usize>(), "[-0-9a-z=.,;\t\n e|#]{1,8}").prop_map(|(a, s)| Edit::Insert(a, s)),
        (any::<usize>(), any::<usize>()).prop_map(|(i, j)| Edit::Swap(i, j)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn mutated_seeds_never_panic(target in 0usize..4, pick in any::<usize>(), edits in prop::collection::vec(edit(), 1..6)) {
        let (name, check) = TARGETS[target];
        let seeds = corpus(name);
        let (_, seed) = &seeds[pick % seeds.len()];
        check(&apply(seed, &edits));
    }
}
