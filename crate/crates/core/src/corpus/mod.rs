//! Corpus records, file layout and the synthetic generator.
//!
//! A corpus directory holds one JSON Lines file per split plus `vocab.txt`,
//! `meta.json` and `profile.json`. Every line is
//! `{"post":[..],"response":[..],"z":0|1|null,"key":"age"|null,"pos":int|null}`.

mod generator;
mod labeling;
mod profile;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab, UNK};

pub use generator::{generate_synthetic, Dialogue, Fillers, GeneratorConfig, KeyConfig};
pub use labeling::{noisy_key_label, SynonymTable};
pub use profile::Profile;

pub const VALUE_SLOT: &str = "{value}";

/// One pair as stored on disk, with string tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub post: Vec<String>,
    pub response: Vec<String>,
    #[serde(default)]
    pub z: Option<u8>,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub pos: Option<usize>,
    /// Index of the positive dialogue group the pair was drawn from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

impl Record {
    pub fn general(post: Vec<String>, response: Vec<String>) -> Self {
        Record {
            post,
            response,
            z: None,
            key: None,
            pos: None,
            group: None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.z == Some(1)
    }
}

/// An id-level pair ready for the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub post: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub z_label: Option<bool>,
    pub key_label: Option<usize>,
    /// 1-based index into `response`.
    pub position_label: Option<usize>,
}

impl TrainingPair {
    pub fn validate(&self, max_len: usize) -> Result<()> {
        let (n, m) = (self.post.len(), self.response.len());
        if n == 0 || m == 0 || n > max_len || m > max_len {
            return Err(Error::Contract(format!(
                "pair lengths post={n} response={m} outside 1..={max_len}"
            )));
        }
        if let Some(t) = self.position_label {
            if t == 0 || t > m {
                return Err(Error::Contract(format!(
                    "position label {t} outside 1..={m}"
                )));
            }
        }
        if self.z_label == Some(false) && self.key_label.is_some() {
            return Err(Error::Contract("negative pair carries a key label".into()));
        }
        Ok(())
    }
}

/// Per-key information the rest of the system needs after generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyInfo {
    pub name: String,
    pub triggers: Vec<String>,
    pub lexicon: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub seed: u64,
    pub max_len: usize,
    pub keys: Vec<KeyInfo>,
}

impl CorpusMeta {
    pub fn key_index(&self, name: &str) -> Option<usize> {
        self.keys.iter().position(|k| k.name == name)
    }

    pub fn synonym_table(&self) -> SynonymTable {
        SynonymTable::new(self.keys.iter().map(|k| k.triggers.clone()).collect())
    }
}

/// All splits of one corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusBundle {
    pub vocab: Vocab,
    pub meta: CorpusMeta,
    pub profile: Profile,
    /// General training pairs for the forward and bidirectional decoders.
    pub d_c: Vec<Record>,
    /// Pairs with a binary "answer from the profile" label.
    pub d_pb: Vec<Record>,
    /// Positive pairs with a (noisy) key label.
    pub d_pr: Vec<Record>,
    /// Held-out posts with gold labels and unseen surface fillers.
    pub md: Vec<Record>,
    pub valid: Vec<Record>,
    /// Held-out pairs drawn like `d_pb`, with gold keys.
    pub pb_test: Vec<Record>,
    /// Held-out positive pairs whose response carries a lexicon value at `pos`.
    pub positions: Vec<Record>,
}

/// Split name → file name, in the order files are written.
pub const SPLIT_FILES: [&str; 7] = [
    "d_c.jsonl",
    "d_pb.jsonl",
    "d_pr.jsonl",
    "md.jsonl",
    "valid.jsonl",
    "pb_test.jsonl",
    "positions.jsonl",
];

/// Counters collected while loading a corpus directory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub records: usize,
    pub unk_substitutions: usize,
}

impl CorpusBundle {
    fn splits(&self) -> [&Vec<Record>; 7] {
        [
            &self.d_c,
            &self.d_pb,
            &self.d_pr,
            &self.md,
            &self.valid,
            &self.pb_test,
            &self.positions,
        ]
    }

    fn splits_mut(&mut self) -> [&mut Vec<Record>; 7] {
        [
            &mut self.d_c,
            &mut self.d_pb,
            &mut self.d_pr,
            &mut self.md,
            &mut self.valid,
            &mut self.pb_test,
            &mut self.positions,
        ]
    }

    /// Converts records to id-level pairs. Out-of-vocabulary tokens become UNK.
    pub fn encode(&self, records: &[Record]) -> Result<Vec<TrainingPair>> {
        records
            .iter()
            .map(|r| encode_record(&self.vocab, &self.meta, r))
            .collect()
    }
}

pub fn encode_record(vocab: &Vocab, meta: &CorpusMeta, r: &Record) -> Result<TrainingPair> {
    let key_label = match &r.key {
        Some(k) => Some(
            meta.key_index(k)
                .ok_or_else(|| Error::Config(format!("record names unknown key {k:?}")))?,
        ),
        None => None,
    };
    let pair = TrainingPair {
        post: vocab.encode(&r.post).0,
        response: vocab.encode(&r.response).0,
        z_label: r.z.map(|z| z == 1),
        key_label,
        position_label: r.pos,
    };
    pair.validate(meta.max_len)?;
    Ok(pair)
}

pub fn save_corpus(bundle: &CorpusBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, split) in SPLIT_FILES.iter().zip(bundle.splits()) {
        let mut out = Vec::new();
        for r in split {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        fs::write(dir.join(name), out)?;
    }
    let mut vocab = fs::File::create(dir.join("vocab.txt"))?;
    for t in bundle.vocab.tokens() {
        writeln!(vocab, "{t}")?;
    }
    let mut meta = serde_json::to_string_pretty(&bundle.meta)?;
    meta.push('\n');
    fs::write(dir.join("meta.json"), meta)?;
    bundle.profile.save(&dir.join("profile.json"))?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<CorpusBundle> {
    load_corpus_with_report(dir).map(|(bundle, _)| bundle)
}

/// Loads a corpus directory. Tokens missing from `vocab.txt` are replaced by
/// `<unk>` and counted.
pub fn load_corpus_with_report(dir: &Path) -> Result<(CorpusBundle, LoadReport)> {
    let vocab_text = fs::read_to_string(dir.join("vocab.txt"))?;
    let vocab = Vocab::from_tokens(vocab_text.lines().map(String::from).collect())?;
    let meta: CorpusMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let profile = Profile::load(&dir.join("profile.json"))?;
    let mut bundle = CorpusBundle {
        vocab,
        meta,
        profile,
        d_c: Vec::new(),
        d_pb: Vec::new(),
        d_pr: Vec::new(),
        md: Vec::new(),
        valid: Vec::new(),
        pb_test: Vec::new(),
        positions: Vec::new(),
    };
    let mut report = LoadReport::default();
    let vocab = bundle.vocab.clone();
    for (name, split) in SPLIT_FILES.iter().zip(bundle.splits_mut()) {
        let path = dir.join(name);
        let text = fs::read_to_string(&path)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut record = parse_line(line).map_err(|message| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            })?;
            report.unk_substitutions += replace_oov(&vocab, &mut record.post);
            report.unk_substitutions += replace_oov(&vocab, &mut record.response);
            report.records += 1;
            split.push(record);
        }
    }
    if report.unk_substitutions > 0 {
        log::warn!(
            "{} tokens not in vocab.txt were mapped to <unk>",
            report.unk_substitutions
        );
    }
    Ok((bundle, report))
}

fn parse_line(line: &str) -> std::result::Result<Record, String> {
    let record: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if matches!(record.z, Some(z) if z > 1) {
        return Err(format!("z must be 0, 1 or null, got {}", record.z.unwrap()));
    }
    if record.post.is_empty() || record.response.is_empty() {
        return Err("post and response must be non-empty".into());
    }
    Ok(record)
}

fn replace_oov(vocab: &Vocab, tokens: &mut [String]) -> usize {
    let mut replaced = 0;
    for t in tokens.iter_mut() {
        if vocab.id(t).is_none() {
            *t = vocab.token(UNK).to_string();
            replaced += 1;
        }
    }
    replaced
}

/// Lowercases and splits on whitespace; the tokenization used for user input.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_json_shape() {
        let r = Record {
            post: vec!["how".into(), "old".into()],
            response: vec!["three".into()],
            z: Some(1),
            key: Some("age".into()),
            pos: Some(1),
            group: None,
        };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"post":["how","old"],"response":["three"],"z":1,"key":"age","pos":1}"#
        );
        assert_eq!(parse_line(&line).unwrap(), r);
    }

    #[test]
    fn missing_response_is_rejected() {
        let err = parse_line(r#"{"post":["hi"],"z":null}"#).unwrap_err();
        assert!(err.contains("response"), "{err}");
    }

    #[test]
    fn bad_z_rejected() {
        assert!(parse_line(r#"{"post":["a"],"response":["b"],"z":2}"#).is_err());
    }

    #[test]
    fn pair_validation() {
        let mut p = TrainingPair {
            post: vec![5],
            response: vec![6, 7],
            z_label: Some(true),
            key_label: Some(0),
            position_label: Some(2),
        };
        assert!(p.validate(4).is_ok());
        p.position_label = Some(3);
        assert!(p.validate(4).is_err());
        p.position_label = None;
        p.z_label = Some(false);
        assert!(p.validate(4).is_err());
    }

    #[test]
    fn tokenize_lowercases() {
        assert_eq!(tokenize("  How OLD  are you "), ["how", "old", "are", "you"]);
    }
}
