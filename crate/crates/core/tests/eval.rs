use persona_core::corpus::{CorpusMeta, KeyInfo, Profile, Record, TrainingPair};
use persona_core::eval::{
    build_sessions, detector_accuracy, position_accuracy, session_proxies, write_detector_csv, Detection,
    Detector, EvalReport, SessionTraces, PROXY_DECLARATION,
};
use persona_core::inference::{DecodeTrace, Route, SystemVariant};
use persona_core::model::{ModelConfig, ModelParams};
use persona_core::vocab::TokenId;
use persona_core::Result;
use proptest::prelude::*;

/// Reads the answer off the post: token 4 means "positive", token 5+k selects key k.
struct Oracle;

impl Detector for Oracle {
    fn detect(&self, post: &[TokenId]) -> Result<Detection> {
        let positive = post[0] == 4;
        let mut key_dist = vec![0.0; 3];
        key_dist[post.get(1).map_or(0, |t| t - 5)] = 1.0;
        Ok(Detection { z_prob: if positive { 0.9 } else { 0.1 }, key_dist })
    }
}

struct Constant(f64);

impl Detector for Constant {
    fn detect(&self, _: &[TokenId]) -> Result<Detection> {
        Ok(Detection { z_prob: self.0, key_dist: vec![1.0 / 3.0; 3] })
    }
}

/// Returns the scripted gate probabilities and keys in order.
struct Scripted(Vec<(f64, usize)>, std::cell::Cell<usize>);

impl Detector for Scripted {
    fn detect(&self, _: &[TokenId]) -> Result<Detection> {
        let i = self.1.get();
        self.1.set(i + 1);
        let (z, k) = self.0[i];
        let mut key_dist = vec![0.1; 3];
        key_dist[k] = 0.8;
        Ok(Detection { z_prob: z, key_dist })
    }
}

fn pair(z: bool, key: Option<usize>) -> TrainingPair {
    let post = match (z, key) {
        (true, Some(k)) => vec![4, 5 + k],
        _ => vec![6],
    };
    TrainingPair { post, response: vec![7], z_label: Some(z), key_label: key, position_label: None }
}

fn balanced() -> Vec<TrainingPair> {
    let mut pairs: Vec<_> = (0..6).map(|i| pair(true, Some(i % 3))).collect();
    pairs.extend((0..6).map(|_| pair(false, None)));
    pairs
}

#[test]
fn perfect_detector_scores_one() {
    let acc = detector_accuracy(&Oracle, &balanced()).unwrap();
    assert_eq!((acc.binary_acc, acc.key_acc_cascaded), (1.0, 1.0));
    assert_eq!((acc.total, acc.positives), (12, 6));
}

#[test]
fn constant_negative_gate_on_balanced_set() {
    let acc = detector_accuracy(&Constant(0.0), &balanced()).unwrap();
    assert_eq!(acc.binary_acc, 0.5);
    assert_eq!(acc.key_acc_cascaded, 0.0);
}

#[test]
fn key_hits_behind_a_wrong_gate_do_not_count() {
    // Both positives pick the right key, but the first gate misses.
    let pairs = vec![pair(true, Some(1)), pair(true, Some(2))];
    let detector = Scripted(vec![(0.4, 1), (0.8, 2)], Default::default());
    let acc = detector_accuracy(&detector, &pairs).unwrap();
    assert_eq!(acc.binary_acc, 0.5);
    assert_eq!(acc.key_acc_cascaded, 0.5);
    assert_eq!(acc.binary_acc_positives, 0.5);
}

#[test]
fn empty_dataset_is_a_domain_error() {
    assert_eq!(detector_accuracy(&Oracle, &[]).unwrap_err().kind(), "domain");
}

#[test]
fn missing_labels_are_contract_errors() {
    let mut p = pair(true, Some(0));
    p.key_label = None;
    assert_eq!(detector_accuracy(&Oracle, &[p]).unwrap_err().kind(), "contract");
    let mut p = pair(false, None);
    p.z_label = None;
    assert_eq!(detector_accuracy(&Oracle, &[p]).unwrap_err().kind(), "contract");
}

#[test]
fn csv_has_one_row_per_decision() {
    let acc = detector_accuracy(&Oracle, &balanced()).unwrap();
    let mut out = Vec::new();
    write_detector_csv(&mut out, &acc.decisions).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    assert_eq!(lines[0], "z_label,key_label,z_prob,predicted_key,gate_correct,key_correct");
    assert_eq!(lines[1], "1,0,0.900000,0,1,1");
    assert_eq!(lines[12], "0,,0.100000,0,1,");
}

proptest! {
    #[test]
    fn cascaded_key_never_beats_positive_gate(script in prop::collection::vec((0.0f64..1.0, 0usize..3, 0usize..3, any::<bool>()), 1..40)) {
        let pairs: Vec<_> = script.iter().map(|&(_, _, k, z)| pair(z, z.then_some(k))).collect();
        let detector = Scripted(script.iter().map(|&(p, k, _, _)| (p, k)).collect(), Default::default());
        let acc = detector_accuracy(&detector, &pairs).unwrap();
        prop_assert!(acc.key_acc_cascaded <= acc.binary_acc_positives);
        prop_assert!((0.0..=1.0).contains(&acc.binary_acc));
    }
}

#[test]
fn literal_values_give_perfect_position_accuracy() {
    let params = ModelParams::init(&ModelConfig::toy(20, 2), 9).unwrap();
    let values = vec![10, 11];
    let pairs: Vec<TrainingPair> = (0..8)
        .map(|i| {
            let k = i % 2;
            let gold = 1 + i % 4;
            let mut response: Vec<TokenId> = (12..16).collect();
            response[gold - 1] = values[k];
            TrainingPair { post: vec![4], response, z_label: Some(true), key_label: Some(k), position_label: Some(gold) }
        })
        .collect();
    let keys = vec!["age".to_string(), "city".to_string(), "name".to_string()];
    let acc = position_accuracy(&params, &pairs, &keys, &values).unwrap();
    assert_eq!(acc.overall, 1.0);
    assert_eq!(acc.per_key.len(), 2, "a key with no pairs is omitted");
    assert!(acc.key("name").is_none());
    assert_eq!(acc.key("age").unwrap().total, 4);
}

fn meta() -> CorpusMeta {
    let key = |name: &str, lexicon: &[&str]| KeyInfo {
        name: name.into(),
        triggers: vec![name.into()],
        lexicon: lexicon.iter().map(|s| s.to_string()).collect(),
    };
    CorpusMeta { seed: 0, max_len: 16, keys: vec![key("age", &["three", "four", "five"]), key("city", &["beijing", "paris"])] }
}

fn profile() -> Profile {
    Profile::new([("age", "three"), ("city", "beijing")]).unwrap()
}

fn trace(response: &str, z_prob: f64) -> DecodeTrace {
    DecodeTrace {
        variant: SystemVariant::Iccm,
        post: vec!["how".into(), "old".into()],
        unk_count: 0,
        z_prob,
        key_dist: Vec::new(),
        key: "age".into(),
        used_profile: z_prob > 0.5,
        route: Route::Bidirectional,
        value: None,
        y_b: Vec::new(),
        y_f: Vec::new(),
        response: response.split_whitespace().map(String::from).collect(),
        attention: Vec::new(),
    }
}

fn session(key: &str, responses: &[(&str, f64)]) -> SessionTraces {
    SessionTraces { key: key.into(), traces: responses.iter().map(|&(r, z)| trace(r, z)).collect() }
}

#[test]
fn identical_correct_responses_are_consistent_but_not_varied() {
    let s = session("age", &[("i am three", 0.9); 3]);
    let p = session_proxies(&[s], &profile(), &meta()).unwrap();
    assert_eq!((p.consistency_rate, p.variety_rate), (1.0, 0.0));
}

#[test]
fn a_contradicting_value_breaks_consistency() {
    let s = session("age", &[("i am three", 0.9), ("three years", 0.9), ("i am four now", 0.9)]);
    let p = session_proxies(&[s], &profile(), &meta()).unwrap();
    assert_eq!((p.consistency_rate, p.variety_rate), (0.0, 1.0));
}

#[test]
fn gate_fired_response_must_name_the_value() {
    let missing = session("age", &[("i am three", 0.9), ("i do not know", 0.9), ("three", 0.9)]);
    let off_gate = session("age", &[("i am three", 0.9), ("i do not know", 0.2), ("three", 0.9)]);
    let p = session_proxies(&[missing, off_gate], &profile(), &meta()).unwrap();
    assert_eq!(p.consistency_rate, 0.5);
    assert!(!p.scores[0].consistent && p.scores[1].consistent);
}

#[test]
fn values_of_other_keys_do_not_contradict() {
    let s = session("age", &[("three in paris", 0.9), ("i am three", 0.9), ("three", 0.9)]);
    let p = session_proxies(&[s], &profile(), &meta()).unwrap();
    assert_eq!(p.consistency_rate, 1.0);
}

#[test]
fn empty_session_list_scores_zero() {
    let p = session_proxies(&[], &profile(), &meta()).unwrap();
    assert_eq!((p.consistency_rate, p.variety_rate, p.sessions), (0.0, 0.0, 0));
}

#[test]
fn unknown_session_key_is_a_config_error() {
    let s = session("hobby", &[("x", 0.1)]);
    assert_eq!(session_proxies(&[s], &profile(), &meta()).unwrap_err().kind(), "config");
}

fn positive(key: &str, post: &str, group: usize) -> Record {
    Record {
        post: post.split_whitespace().map(String::from).collect(),
        response: vec!["ok".into()],
        z: Some(1),
        key: Some(key.into()),
        pos: None,
        group: Some(group),
    }
}

#[test]
fn sessions_spread_over_groups_and_stay_distinct() {
    let mut records = Vec::new();
    for g in 0..3 {
        for i in 0..4 {
            records.push(positive("age", &format!("age post {g} {i}"), g));
            records.push(positive("city", &format!("city post {g} {i}"), g));
        }
    }
    let keys = vec!["age".to_string(), "city".to_string()];
    let sessions = build_sessions(&records, &keys, 5, 3, 1).unwrap();
    assert_eq!(sessions.len(), 10);
    for s in &sessions {
        assert_eq!(s.posts.len(), 3);
        let groups: std::collections::BTreeSet<&String> = s.posts.iter().map(|p| &p[2]).collect();
        assert_eq!(groups.len(), 3, "{s:?}");
        assert!(s.posts.iter().all(|p| p[0] == s.key));
    }
    assert_eq!(sessions, build_sessions(&records, &keys, 5, 3, 1).unwrap());
}

#[test]
fn too_few_posts_for_a_session_is_a_config_error() {
    let records = vec![positive("age", "a b", 0), positive("age", "a b", 1)];
    let err = build_sessions(&records, &["age".to_string()], 1, 2, 0).unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn report_carries_the_proxy_declaration() {
    let report = EvalReport::new(SystemVariant::Iccm);
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["declaration"], PROXY_DECLARATION);
    assert_eq!(json["variant"], "iccm");
}
