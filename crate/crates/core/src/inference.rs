//! Gated generation behind one entry point for the five system variants.
//!
//! The gate `P(z=1|x)` routes a post either to the general decoder or to a
//! profile-aware path that depends on the variant. Generation is stateless:
//! the output depends only on the post, the profile and the checkpoint.

use std::fmt;
use std::str::FromStr;

use numgrad::{sigmoid, softmax, Tape};
use serde::{Deserialize, Serialize};

use crate::corpus::Profile;
use crate::error::{Error, Result};
use crate::model::{
    bidirectional_generate, encode, forward_generate, gate_logit, key_scores, AnchorMode, Checkpoint,
    Chooser, DecodeMode,
};
use crate::training::profile_value_ids;
use crate::vocab::{TokenId, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemVariant {
    /// General decoder only.
    #[serde(rename = "seq2seq")]
    Seq2Seq,
    /// Gate fired: the response is the selected value alone.
    #[serde(rename = "seq2seq_pv")]
    Seq2SeqPv,
    /// Gate fired: the general decoder emits the selected value first and continues.
    #[serde(rename = "seq2seq_pvd")]
    Seq2SeqPvd,
    /// Bidirectional decoding from the value, trained with random anchors.
    IccmPos,
    /// Bidirectional decoding from the value, trained with detected anchors.
    Iccm,
}

impl SystemVariant {
    pub const ALL: [SystemVariant; 5] = [
        SystemVariant::Seq2Seq,
        SystemVariant::Seq2SeqPv,
        SystemVariant::Seq2SeqPvd,
        SystemVariant::IccmPos,
        SystemVariant::Iccm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemVariant::Seq2Seq => "seq2seq",
            SystemVariant::Seq2SeqPv => "seq2seq_pv",
            SystemVariant::Seq2SeqPvd => "seq2seq_pvd",
            SystemVariant::IccmPos => "iccm_pos",
            SystemVariant::Iccm => "iccm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SystemVariant::Seq2Seq => "Seq2Seq",
            SystemVariant::Seq2SeqPv => "Seq2Seq+PV",
            SystemVariant::Seq2SeqPvd => "Seq2Seq+PVD",
            SystemVariant::IccmPos => "ICCM-Pos",
            SystemVariant::Iccm => "ICCM",
        }
    }

    /// Anchor mode of the checkpoint this variant runs on.
    pub fn anchor_mode(self) -> AnchorMode {
        match self {
            SystemVariant::IccmPos => AnchorMode::Random,
            _ => AnchorMode::Detected,
        }
    }

    pub fn uses_profile(self) -> bool {
        self != SystemVariant::Seq2Seq
    }
}

impl fmt::Display for SystemVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '+'], "_");
        SystemVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Which generator produced the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Forward,
    Value,
    ValueDecoding,
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyProb {
    pub key: String,
    pub prob: f64,
}

/// Everything decided while answering one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub variant: SystemVariant,
    pub post: Vec<String>,
    /// Post tokens outside the vocabulary.
    pub unk_count: usize,
    pub z_prob: f64,
    pub key_dist: Vec<KeyProb>,
    /// Highest-probability key, whether or not the gate fired.
    pub key: String,
    pub used_profile: bool,
    pub route: Route,
    /// Value placed in the response, when the profile was used.
    pub value: Option<String>,
    pub y_b: Vec<String>,
    pub y_f: Vec<String>,
    pub response: Vec<String>,
    /// Attention over post positions for each generated token of `response`
    /// (empty for the value token, which is not generated).
    pub attention: Vec<Vec<f64>>,
}

impl DecodeTrace {
    pub fn response_text(&self) -> String {
        self.response.join(" ")
    }

    /// The gate decision, independent of whether the variant acted on it.
    pub fn gate_fired(&self) -> bool {
        self.z_prob > 0.5
    }
}

fn check_variant(ckpt: &Checkpoint, variant: SystemVariant) -> Result<()> {
    if ckpt.anchor_mode != variant.anchor_mode() {
        return Err(Error::Contract(format!(
            "variant {} needs a checkpoint trained with {:?} anchors, got {:?}",
            variant.label(),
            variant.anchor_mode(),
            ckpt.anchor_mode
        )));
    }
    Ok(())
}

/// Answers one tokenized post.
pub fn generate(
    ckpt: &Checkpoint,
    profile: &Profile,
    post: &[String],
    variant: SystemVariant,
    mode: DecodeMode,
) -> Result<DecodeTrace> {
    check_variant(ckpt, variant)?;
    if post.is_empty() {
        return Err(Error::Domain("post is empty".into()));
    }
    let value_ids = profile_value_ids(profile, &ckpt.keys, &ckpt.vocab)?;
    let (post_ids, unk_count) = ckpt.vocab.encode(post);
    let params = &ckpt.params;
    let mut tape = Tape::new(&params.store);
    let enc = encode(&mut tape, params, &post_ids)?;

    let logit = gate_logit(&mut tape, params, &enc)?;
    let z_prob = sigmoid(tape.scalar(logit)?);
    let scores = key_scores(&mut tape, params, &enc, &value_ids)?;
    let beta = softmax(tape.value(scores).data());
    let chosen = argmax(&beta);
    let key_dist = ckpt
        .keys
        .iter()
        .zip(&beta)
        .map(|(key, &prob)| KeyProb { key: key.clone(), prob })
        .collect();

    let used_profile = variant.uses_profile() && z_prob > params.config.p_z_threshold;
    let mut chooser = Chooser::new(mode)?;
    let value_id: TokenId = value_ids[chosen];
    let value_text = profile.value_at(chosen).to_string();
    let words = |ids: &[TokenId]| ckpt.vocab.decode(ids);

    let (route, y_b, y_f, response, attention) = if !used_profile {
        let g = forward_generate(&mut tape, params, &enc, &mut chooser, &[])?;
        let r = words(&g.tokens);
        (Route::Forward, Vec::new(), Vec::new(), r, g.attention)
    } else {
        match variant {
            SystemVariant::Seq2SeqPv => (Route::Value, Vec::new(), Vec::new(), vec![value_text.clone()], vec![Vec::new()]),
            SystemVariant::Seq2SeqPvd => {
                let mut g = forward_generate(&mut tape, params, &enc, &mut chooser, &[value_id])?;
                let mut r = words(&g.tokens);
                r[0] = value_text.clone();
                g.attention[0].clear();
                let y_f = r[1..].to_vec();
                (Route::ValueDecoding, Vec::new(), y_f, r, g.attention)
            }
            _ => {
                let (back, fwd) = bidirectional_generate(&mut tape, params, &enc, value_id, &mut chooser)?;
                let y_b = words(&back.tokens);
                let y_f = words(&fwd.tokens);
                let mut r = y_b.clone();
                r.push(value_text.clone());
                r.extend(y_f.iter().cloned());
                let mut att = back.attention;
                att.push(Vec::new());
                att.extend(fwd.attention);
                (Route::Bidirectional, y_b, y_f, r, att)
            }
        }
    };
    if used_profile && value_id == UNK {
        log::warn!("profile value {value_text:?} is outside the vocabulary; decoding from <unk>");
    }

    Ok(DecodeTrace {
        variant,
        post: post.to_vec(),
        unk_count,
        z_prob,
        key_dist,
        key: ckpt.keys[chosen].clone(),
        used_profile,
        route,
        value: used_profile.then_some(value_text),
        y_b,
        y_f,
        response,
        attention,
    })
}

/// Answers each post independently, in order.
pub fn run_session(
    ckpt: &Checkpoint,
    profile: &Profile,
    posts: &[Vec<String>],
    variant: SystemVariant,
    mode: DecodeMode,
) -> Result<Vec<DecodeTrace>> {
    posts
        .iter()
        .map(|p| generate(ckpt, profile, p, variant, mode))
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
