use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use persona_core::corpus::{
    generate_synthetic, load_corpus, load_corpus_with_report, noisy_key_label, save_corpus,
    GeneratorConfig, SPLIT_FILES,
};
use persona_core::Error;

fn config(name: &str) -> GeneratorConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    GeneratorConfig::load(&path).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n, bytes)
        })
        .collect()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = config("desk.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_corpus(&generate_synthetic(&cfg, 42).unwrap(), a.path()).unwrap();
    save_corpus(&generate_synthetic(&cfg, 42).unwrap(), b.path()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));

    let c = tempfile::tempdir().unwrap();
    save_corpus(&generate_synthetic(&cfg, 43).unwrap(), c.path()).unwrap();
    assert_ne!(read_all(a.path()), read_all(c.path()));
}

#[test]
fn per_key_counts_follow_the_configured_ratios() {
    let cfg = config("desk.json");
    let bundle = generate_synthetic(&cfg, 42).unwrap();
    let expected: usize = cfg.pb_counts().iter().map(|(p, n)| p + n).sum();
    assert_eq!(bundle.d_pb.len(), expected);
    for (key, (p, n)) in cfg.keys.iter().zip(cfg.pb_counts()) {
        let want = key.positive as f64 / key.negative as f64;
        let got = p as f64 / n as f64;
        assert!((got - want).abs() / want < 0.02, "{}: {got} vs {want}", key.name);
    }
    // name ≈ 6966:3442 after scaling.
    assert_eq!(cfg.pb_counts()[0], (139, 69));

    assert_eq!(bundle.pb_test.len(), 2000);
    let positives = bundle.pb_test.iter().filter(|r| r.is_positive()).count();
    let total_pos: usize = cfg.keys.iter().map(|k| k.positive).sum();
    let total: usize = cfg.keys.iter().map(|k| k.positive + k.negative).sum();
    let want = 2000.0 * total_pos as f64 / total as f64;
    assert!((positives as f64 - want).abs() <= cfg.keys.len() as f64);
}

#[test]
fn profile_related_pairs_are_labeled_positive_subset() {
    let cfg = config("desk.json");
    let bundle = generate_synthetic(&cfg, 7).unwrap();
    let positives: HashSet<_> = bundle
        .d_pb
        .iter()
        .filter(|r| r.is_positive())
        .map(|r| (r.post.clone(), r.response.clone()))
        .collect();
    assert!(!bundle.d_pr.is_empty());
    let table = bundle.meta.synonym_table();
    for r in &bundle.d_pr {
        assert_eq!(r.z, Some(1));
        assert!(positives.contains(&(r.post.clone(), r.response.clone())));
        let k = bundle.meta.key_index(r.key.as_deref().unwrap()).unwrap();
        assert_eq!(noisy_key_label(&r.post, &table), Some(k));
    }
}

#[test]
fn every_profile_related_response_mentions_one_lexicon_value() {
    let cfg = config("desk.json");
    let bundle = generate_synthetic(&cfg, 11).unwrap();
    let all_values: HashSet<&str> = bundle
        .meta
        .keys
        .iter()
        .flat_map(|k| k.lexicon.iter().map(String::as_str))
        .collect();
    // The noisy label can disagree with the generating key, so audit against
    // the union of lexicons: exactly one value token per response.
    for r in &bundle.d_pr {
        let hits = r.response.iter().filter(|t| all_values.contains(t.as_str())).count();
        assert_eq!(hits, 1, "{:?}", r.response);
    }
    for r in &bundle.positions {
        let key = &bundle.meta.keys[bundle.meta.key_index(r.key.as_deref().unwrap()).unwrap()];
        let pos = r.pos.unwrap();
        assert!(key.lexicon.contains(&r.response[pos - 1]));
        assert_ne!(Some(r.response[pos - 1].as_str()), bundle.profile.get(&key.name));
    }
}

#[test]
fn held_out_posts_never_appear_in_training() {
    let bundle = generate_synthetic(&config("desk.json"), 3).unwrap();
    let train: HashSet<_> = bundle.d_c.iter().map(|r| r.post.clone()).collect();
    assert_eq!(bundle.md.len(), 600);
    for r in &bundle.md {
        assert!(!train.contains(&r.post));
        assert!(r.z.is_some());
        assert_eq!(r.key.is_some(), r.is_positive());
    }
}

#[test]
fn save_then_load_is_identity() {
    let bundle = generate_synthetic(&config("desk.json"), 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&bundle, dir.path()).unwrap();
    let (loaded, report) = load_corpus_with_report(dir.path()).unwrap();
    assert_eq!(report.unk_substitutions, 0);
    assert_eq!(loaded, bundle);
}

#[test]
fn missing_response_reports_line_number() {
    let bundle = generate_synthetic(&config("desk.json"), 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&bundle, dir.path()).unwrap();
    let path = dir.path().join("d_pr.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = r#"{"post":["hello"],"z":1}"#;
    fs::write(&path, lines.join("\n")).unwrap();
    match load_corpus(dir.path()) {
        Err(Error::Parse { line, path, message }) => {
            assert_eq!(line, 3);
            assert!(path.ends_with("d_pr.jsonl"));
            assert!(message.contains("response"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn injected_unknown_tokens_are_counted() {
    let bundle = generate_synthetic(&config("desk.json"), 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&bundle, dir.path()).unwrap();
    let path = dir.path().join("valid.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[0] = r#"{"post":["zzqx1","what","zzqx2"],"response":["zzqx3"],"z":null,"key":null,"pos":null}"#.into();
    lines[1] = r#"{"post":["zzqx4"],"response":["i","zzqx5"],"z":null,"key":null,"pos":null}"#.into();
    fs::write(&path, lines.join("\n")).unwrap();
    let (loaded, report) = load_corpus_with_report(dir.path()).unwrap();
    assert_eq!(report.unk_substitutions, 5);
    assert_eq!(loaded.valid[0].post, ["<unk>", "what", "<unk>"]);
}

#[test]
fn empty_template_set_is_a_config_error() {
    let mut cfg = config("desk.json");
    cfg.keys[2].negative_dialogues.clear();
    assert!(matches!(generate_synthetic(&cfg, 1), Err(Error::Config(_))));
}

#[test]
fn extended_config_generates_ten_keys() {
    let cfg = config("desk_ext.json");
    let bundle = generate_synthetic(&cfg, 42).unwrap();
    assert_eq!(bundle.meta.keys.len(), 10);
    assert_eq!(bundle.profile.len(), 10);
    let new_keys: usize = cfg.keys[6..].iter().map(|k| k.positive + k.negative).sum();
    assert_eq!(new_keys, 16_332);
    for name in ["hobby", "idol", "speciality", "employer"] {
        assert!(bundle.d_pr.iter().any(|r| r.key.as_deref() == Some(name)));
    }
    assert_eq!(SPLIT_FILES.len(), 7);
}
