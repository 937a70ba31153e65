//! Template-driven synthetic corpus.
//!
//! All language lives in the [`GeneratorConfig`] JSON: keys, trigger words,
//! value lexicons, dialogue templates and split sizes. Adding a profile key is
//! a config edit.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{noisy_key_label, CorpusBundle, CorpusMeta, KeyInfo, Profile, Record, VALUE_SLOT};
use crate::error::{Error, Result};
use crate::vocab::build_vocab;

/// A group of interchangeable posts answered by a group of interchangeable responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub posts: Vec<String>,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyConfig {
    pub name: String,
    /// Words that the noisy key labeler associates with this key.
    pub triggers: Vec<String>,
    /// Values the key can take; responses mention one of these.
    pub lexicon: Vec<String>,
    /// Unscaled number of positive pairs in the profile-binary set.
    pub positive: usize,
    /// Unscaled number of negative pairs in the profile-binary set.
    pub negative: usize,
    pub positive_dialogues: Vec<Dialogue>,
    pub negative_dialogues: Vec<Dialogue>,
}

/// Optional words wrapped around posts. The `md_*` lists are reserved for the
/// held-out test posts so they never match a training post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fillers {
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    pub md_prefixes: Vec<String>,
    pub md_suffixes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocab_cap: usize,
    pub max_len: usize,
    /// Multiplier applied to every key's `positive` / `negative` count.
    pub pb_scale: f64,
    pub pb_test_size: usize,
    pub general_pairs: usize,
    pub valid_general: usize,
    pub valid_profile: usize,
    pub md_positive_per_key: usize,
    pub md_negative_per_key: usize,
    pub position_fixture_size: usize,
    pub fillers: Fillers,
    pub profile: Profile,
    pub keys: Vec<KeyConfig>,
    pub general_dialogues: Vec<Dialogue>,
}

impl GeneratorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Scaled (positive, negative) counts for each key.
    pub fn pb_counts(&self) -> Vec<(usize, usize)> {
        let scale = |n: usize| ((n as f64 * self.pb_scale).round() as usize).max(1);
        self.keys
            .iter()
            .map(|k| (scale(k.positive), scale(k.negative)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.keys.is_empty() {
            return fail("generator config lists no keys".into());
        }
        if self.max_len == 0 || self.pb_scale <= 0.0 {
            return fail("max_len and pb_scale must be positive".into());
        }
        if self.general_dialogues.is_empty() && self.general_pairs > 0 {
            return fail("general_pairs > 0 but no general dialogues".into());
        }
        check_dialogues("general", &self.general_dialogues, false)?;
        if self.profile.keys().ne(self.keys.iter().map(|k| k.name.as_str())) {
            return fail("profile keys must match the configured keys in order".into());
        }
        let mut seen_values: HashSet<&str> = HashSet::new();
        for key in &self.keys {
            if key.positive_dialogues.is_empty() || key.negative_dialogues.is_empty() {
                return fail(format!("key {:?} has an empty template set", key.name));
            }
            if key.triggers.is_empty() || key.lexicon.is_empty() {
                return fail(format!("key {:?} needs triggers and a lexicon", key.name));
            }
            check_dialogues(&key.name, &key.positive_dialogues, true)?;
            check_dialogues(&key.name, &key.negative_dialogues, false)?;
            for v in &key.lexicon {
                if v.split_whitespace().count() != 1 {
                    return fail(format!("lexicon value {v:?} of {:?} is not one token", key.name));
                }
                if !seen_values.insert(v) {
                    return fail(format!("lexicon value {v:?} appears under two keys"));
                }
            }
            let value = self.profile.get(&key.name).unwrap_or_default();
            if !key.lexicon.iter().any(|v| v == value) {
                return fail(format!(
                    "profile value {value:?} is not in the {:?} lexicon",
                    key.name
                ));
            }
            if self.position_fixture_size > 0 && key.lexicon.len() < 2 {
                return fail(format!(
                    "key {:?} needs two lexicon values for the position fixture",
                    key.name
                ));
            }
        }
        if self.md_positive_per_key + self.md_negative_per_key > 0 && self.fillers.md_prefixes.is_empty() {
            return fail("md_prefixes must be non-empty to keep test posts unseen".into());
        }
        let train_fillers: HashSet<&str> = self
            .fillers
            .prefixes
            .iter()
            .chain(&self.fillers.suffixes)
            .map(String::as_str)
            .collect();
        for p in &self.fillers.md_prefixes {
            if p.trim().is_empty() || train_fillers.contains(p.as_str()) {
                return fail(format!("md prefix {p:?} must be non-empty and unused in training"));
            }
        }
        Ok(())
    }
}

fn check_dialogues(owner: &str, dialogues: &[Dialogue], positive: bool) -> Result<()> {
    for d in dialogues {
        if d.posts.is_empty() || d.responses.is_empty() {
            return Err(Error::Config(format!("{owner:?} has a dialogue with no posts or responses")));
        }
        for t in d.posts.iter().chain(&d.responses) {
            if t.split_whitespace().next().is_none() {
                return Err(Error::Config(format!("{owner:?} has an empty template")));
            }
        }
        if positive {
            for r in &d.responses {
                let slots = r.split_whitespace().filter(|t| *t == VALUE_SLOT).count();
                if slots != 1 {
                    return Err(Error::Config(format!(
                        "positive response {r:?} of {owner:?} must contain exactly one {VALUE_SLOT}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Largest-remainder split of `total` proportional to `weights`; ties go to the earlier entry.
pub(crate) fn allocate(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rest: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (total * w % sum, i))
        .collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - out.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        out[i] += 1;
    }
    out
}

struct Sampler<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    /// Dialogue index chosen by the latest `pair` call.
    last_group: usize,
}

#[derive(Clone, Copy)]
enum Style {
    Train,
    Held,
}

impl Sampler<'_> {
    fn pick<'s>(&mut self, items: &'s [String]) -> &'s str {
        items.choose(&mut self.rng).map_or("", String::as_str)
    }

    fn wrap_post(&mut self, body: &str, style: Style) -> String {
        let f = &self.cfg.fillers;
        let (pre, suf) = match style {
            Style::Train => (self.pick(&f.prefixes), self.pick(&f.suffixes)),
            Style::Held => (self.pick(&f.md_prefixes), self.pick(&f.md_suffixes)),
        };
        format!("{pre} {body} {suf}")
    }

    /// Tokenizes a template, filling every slot with a lexicon sample.
    /// Returns the tokens and the 1-based position of the last filled slot.
    fn fill(&mut self, template: &str, lexicon: &[String], forced: Option<&str>) -> (Vec<String>, Option<usize>) {
        let mut pos = None;
        let mut out = Vec::new();
        for tok in template.split_whitespace() {
            if tok == VALUE_SLOT {
                let v = match forced {
                    Some(v) => v.to_string(),
                    None => self.pick(lexicon).to_string(),
                };
                out.push(v);
                pos = Some(out.len());
            } else {
                out.push(tok.to_string());
            }
        }
        (out, pos)
    }

    fn pair(
        &mut self,
        dialogues: &[Dialogue],
        lexicon: &[String],
        style: Style,
        forced_value: Option<&str>,
    ) -> Result<(Vec<String>, Vec<String>, Option<usize>)> {
        if dialogues.is_empty() {
            return Err(Error::Config("empty dialogue list".into()));
        }
        self.last_group = self.rng.gen_range(0..dialogues.len());
        let d = &dialogues[self.last_group];
        let body = self.pick(&d.posts).to_string();
        let response = self.pick(&d.responses).to_string();
        let wrapped = self.wrap_post(&body, style);
        let (post, _) = self.fill(&wrapped, lexicon, None);
        let (response, pos) = self.fill(&response, lexicon, forced_value);
        let max = self.cfg.max_len;
        if post.len() > max || response.len() > max {
            return Err(Error::Config(format!(
                "template produces a pair longer than max_len {max}: {post:?} / {response:?}"
            )));
        }
        Ok((post, response, pos))
    }
}

/// Deterministic corpus for a fixed `(config, seed)`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<CorpusBundle> {
    config.validate()?;
    let mut s = Sampler {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(seed),
        last_group: 0,
    };
    let meta = CorpusMeta {
        seed,
        max_len: config.max_len,
        keys: config
            .keys
            .iter()
            .map(|k| KeyInfo {
                name: k.name.clone(),
                triggers: k.triggers.clone(),
                lexicon: k.lexicon.clone(),
            })
            .collect(),
    };
    let synonyms = meta.synonym_table();
    let noisy = |post: &[String]| noisy_key_label(post, &synonyms).map(|k| config.keys[k].name.clone());

    let mut d_pb = Vec::new();
    for (key, (n_pos, n_neg)) in config.keys.iter().zip(config.pb_counts()) {
        for _ in 0..n_pos {
            let (post, response, _) = s.pair(&key.positive_dialogues, &key.lexicon, Style::Train, None)?;
            d_pb.push(labeled(post, response, 1, None, None).in_group(s.last_group));
        }
        for _ in 0..n_neg {
            let (post, response, _) = s.pair(&key.negative_dialogues, &key.lexicon, Style::Train, None)?;
            d_pb.push(labeled(post, response, 0, None, None));
        }
    }
    d_pb.shuffle(&mut s.rng);

    let d_pr: Vec<Record> = d_pb
        .iter()
        .filter(|r| r.is_positive())
        .filter_map(|r| {
            noisy(&r.post).map(|key| Record {
                key: Some(key),
                ..r.clone()
            })
        })
        .collect();

    let mut d_c = Vec::new();
    for _ in 0..config.general_pairs {
        let (post, response, _) = s.pair(&config.general_dialogues, &[], Style::Train, None)?;
        d_c.push(Record::general(post, response));
    }
    d_c.extend(d_pb.iter().map(|r| Record::general(r.post.clone(), r.response.clone())));

    let mut valid = Vec::new();
    for _ in 0..config.valid_general {
        let (post, response, _) = s.pair(&config.general_dialogues, &[], Style::Train, None)?;
        valid.push(Record::general(post, response));
    }
    let pos_weights: Vec<usize> = config.keys.iter().map(|k| k.positive).collect();
    for (key, n) in config.keys.iter().zip(allocate(config.valid_profile, &pos_weights)) {
        for _ in 0..n {
            let (post, response, _) = s.pair(&key.positive_dialogues, &key.lexicon, Style::Train, None)?;
            let label = noisy(&post);
            valid.push(labeled(post, response, 1, label, None).in_group(s.last_group));
        }
    }

    let mut pb_test = Vec::new();
    let key_weights: Vec<usize> = config.keys.iter().map(|k| k.positive + k.negative).collect();
    for (key, n) in config.keys.iter().zip(allocate(config.pb_test_size, &key_weights)) {
        let split = allocate(n, &[key.positive, key.negative]);
        for _ in 0..split[0] {
            let (post, response, _) = s.pair(&key.positive_dialogues, &key.lexicon, Style::Train, None)?;
            pb_test.push(labeled(post, response, 1, Some(key.name.clone()), None).in_group(s.last_group));
        }
        for _ in 0..split[1] {
            let (post, response, _) = s.pair(&key.negative_dialogues, &key.lexicon, Style::Train, None)?;
            pb_test.push(labeled(post, response, 0, None, None));
        }
    }
    pb_test.shuffle(&mut s.rng);

    let train_posts: HashSet<Vec<String>> = d_c.iter().map(|r| r.post.clone()).collect();
    let mut md = Vec::new();
    for key in &config.keys {
        for positive in [true, false] {
            let (count, dialogues) = if positive {
                (config.md_positive_per_key, &key.positive_dialogues)
            } else {
                (config.md_negative_per_key, &key.negative_dialogues)
            };
            for _ in 0..count {
                let mut attempt = 0;
                let (post, response, group) = loop {
                    let (post, response, _) = s.pair(dialogues, &key.lexicon, Style::Held, None)?;
                    if !train_posts.contains(&post) {
                        break (post, response, s.last_group);
                    }
                    attempt += 1;
                    if attempt == 100 {
                        return Err(Error::Config(format!(
                            "cannot draw a held-out {:?} post distinct from training posts",
                            key.name
                        )));
                    }
                };
                if positive {
                    md.push(labeled(post, response, 1, Some(key.name.clone()), None).in_group(group));
                } else {
                    md.push(labeled(post, response, 0, None, None));
                }
            }
        }
    }

    let mut positions = Vec::new();
    for i in 0..config.position_fixture_size {
        let key = &config.keys[i % config.keys.len()];
        let profile_value = config.profile.value_at(i % config.keys.len());
        let others: Vec<String> = key.lexicon.iter().filter(|v| *v != profile_value).cloned().collect();
        let value = s.pick(&others).to_string();
        let (post, response, pos) =
            s.pair(&key.positive_dialogues, &key.lexicon, Style::Train, Some(&value))?;
        positions.push(labeled(post, response, 1, Some(key.name.clone()), pos).in_group(s.last_group));
    }

    let extra: Vec<Vec<String>> = config
        .keys
        .iter()
        .flat_map(|k| [k.lexicon.clone(), k.triggers.clone(), vec![k.name.clone()]])
        .collect();
    let vocab = build_vocab(
        [&d_c, &d_pb, &d_pr, &md, &valid, &pb_test, &positions]
            .into_iter()
            .flat_map(|split| split.iter())
            .flat_map(|r| [r.post.as_slice(), r.response.as_slice()])
            .chain(extra.iter().map(Vec::as_slice)),
        config.vocab_cap,
    )?;

    Ok(CorpusBundle {
        vocab,
        meta,
        profile: config.profile.clone(),
        d_c,
        d_pb,
        d_pr,
        md,
        valid,
        pb_test,
        positions,
    })
}

fn labeled(post: Vec<String>, response: Vec<String>, z: u8, key: Option<String>, pos: Option<usize>) -> Record {
    Record {
        post,
        response,
        z: Some(z),
        key,
        pos,
        group: None,
    }
}

impl Record {
    fn in_group(mut self, group: usize) -> Self {
        self.group = Some(group);
        self
    }
}
