use numgrad::{ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// The three decoders: general forward, backward half, forward half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderId {
    Fr,
    Back,
    Fwd,
}

impl DecoderId {
    pub const ALL: [DecoderId; 3] = [DecoderId::Fr, DecoderId::Back, DecoderId::Fwd];

    pub fn name(self) -> &'static str {
        match self {
            DecoderId::Fr => "fr",
            DecoderId::Back => "b",
            DecoderId::Fwd => "f",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_x: ParamId,
    pub w_rz: ParamId,
    pub w_n: ParamId,
    pub b_rz: ParamId,
    pub b_n: ParamId,
}

/// `score = v · tanh(W·input + b)`.
#[derive(Debug, Clone, Copy)]
pub struct ScorerIds {
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    /// `[hidden × attn]`, applied once to the encoder states.
    pub w_enc: ParamId,
    /// `[attn × hidden]`, applied to the previous decoder state.
    pub w_state: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

#[derive(Debug, Clone)]
pub struct DecoderIds {
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub layers: Vec<GruIds>,
    pub attn: AttentionIds,
    /// `[emb × (2·hidden + emb)]`: maps `[s; E[prev]; c]` into embedding space.
    pub out_proj: ParamId,
    pub out_proj_b: ParamId,
    /// Per-token output bias `[vocab]`.
    pub out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct ParamIds {
    pub embed: ParamId,
    pub key_embed: ParamId,
    pub value_embed: Option<ParamId>,
    pub encoder: Vec<GruIds>,
    pub gate_w: ParamId,
    pub selector: ScorerIds,
    decoders: Vec<DecoderIds>,
}

impl ParamIds {
    pub fn decoder(&self, id: DecoderId) -> &DecoderIds {
        &self.decoders[id.index()]
    }
}

/// Every learned tensor, registered by name in a fixed order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub ids: ParamIds,
}

/// `U(−√(3/n), √(3/n))` with `n` the fan-in.
pub fn init_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = init_bound(fan_in);
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Ok(self.store.insert(name, Tensor::new(shape.to_vec(), data)?)?)
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<GruIds> {
        Ok(GruIds {
            w_x: self.add(format!("{prefix}.w_x"), &[3 * hidden, input], input)?,
            w_rz: self.add(format!("{prefix}.w_rz"), &[2 * hidden, hidden], hidden)?,
            w_n: self.add(format!("{prefix}.w_n"), &[hidden, hidden], hidden)?,
            b_rz: self.add(format!("{prefix}.b_rz"), &[2 * hidden], 2 * hidden)?,
            b_n: self.add(format!("{prefix}.b_n"), &[hidden], hidden)?,
        })
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let (v, e, h, a, k) = (
            config.vocab_size,
            config.emb_dim,
            config.hidden_dim,
            config.attn_dim,
            config.num_keys,
        );
        let embed = b.add("embed".into(), &[v, e], e)?;
        let key_embed = b.add("key_embed".into(), &[k, e], e)?;
        let value_embed = if config.tie_value_embeddings {
            None
        } else {
            Some(b.add("value_embed".into(), &[v, e], e)?)
        };
        let mut encoder = Vec::new();
        for l in 0..config.num_layers {
            let input = if l == 0 { e } else { h };
            encoder.push(b.gru(&format!("enc.l{l}"), input, h)?);
        }
        let gate_w = b.add("gate.w".into(), &[h], h)?;
        let sel_in = h + 2 * e;
        let selector = ScorerIds {
            w: b.add("sel.w".into(), &[a, sel_in], sel_in)?,
            b: b.add("sel.b".into(), &[a], a)?,
            v: b.add("sel.v".into(), &[a], a)?,
        };
        let mut decoders = Vec::new();
        for d in DecoderId::ALL {
            let p = d.name();
            let init_w = b.add(format!("{p}.init.w"), &[config.num_layers * h, h], h)?;
            let init_b = b.add(format!("{p}.init.b"), &[config.num_layers * h], h)?;
            let mut layers = Vec::new();
            for l in 0..config.num_layers {
                let input = if l == 0 { e + h } else { h };
                layers.push(b.gru(&format!("{p}.l{l}"), input, h)?);
            }
            let attn = AttentionIds {
                w_enc: b.add(format!("{p}.att.w_enc"), &[h, a], h)?,
                w_state: b.add(format!("{p}.att.w_state"), &[a, h], h)?,
                b: b.add(format!("{p}.att.b"), &[a], a)?,
                v: b.add(format!("{p}.att.v"), &[a], a)?,
            };
            let out_in = 2 * h + e;
            let out_proj = b.add(format!("{p}.out.proj"), &[e, out_in], out_in)?;
            let out_proj_b = b.add(format!("{p}.out.proj_b"), &[e], e)?;
            let out_b = b.add(format!("{p}.out.b"), &[v], v)?;
            decoders.push(DecoderIds {
                init_w,
                init_b,
                layers,
                attn,
                out_proj,
                out_proj_b,
                out_b,
            });
        }
        let ids = ParamIds {
            embed,
            key_embed,
            value_embed,
            encoder,
            gate_w,
            selector,
            decoders,
        };
        Ok(ModelParams {
            config: config.clone(),
            store: b.store,
            ids,
        })
    }

    /// Rebuilds a model from stored tensors, checking every name and shape
    /// against a fresh layout for `config`.
    pub fn from_store(config: &ModelConfig, store: ParamStore) -> Result<Self> {
        let mut template = ModelParams::init(config, 0)?;
        if template.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                template.store.len(),
                store.len()
            )));
        }
        for (id, name, value) in template.store.iter() {
            let Some(found) = store.id(name) else {
                return Err(Error::Checkpoint(format!("missing tensor {name:?}")));
            };
            if found != id || store.get(found).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    store.get(found).shape(),
                    value.shape()
                )));
            }
        }
        template.store = store;
        Ok(template)
    }

    /// Embedding row used as the profile value `vᵢ`.
    pub fn value_table(&self) -> ParamId {
        self.ids.value_embed.unwrap_or(self.ids.embed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_fan_in_bounds() {
        let cfg = ModelConfig::toy(20, 3);
        let params = ModelParams::init(&cfg, 5).unwrap();
        assert!(params.store.all_finite());
        let w = params.store.get(params.ids.encoder[0].w_x);
        assert_eq!(w.shape(), [24, 4]);
        let bound = init_bound(4);
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        assert!(w.data().iter().any(|x| x.abs() > 0.5 * bound));
        let out = params.store.get(params.ids.decoder(DecoderId::Fr).out_proj);
        assert_eq!(out.shape(), [4, 20]);
        assert!(out.data().iter().all(|x| x.abs() <= init_bound(20)));
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::toy(20, 3);
        let a = ModelParams::init(&cfg, 9).unwrap();
        let b = ModelParams::init(&cfg, 9).unwrap();
        assert_eq!(a.store, b.store);
        let c = ModelParams::init(&cfg, 10).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn untied_values_get_their_own_table() {
        let mut cfg = ModelConfig::toy(20, 3);
        assert_eq!(ModelParams::init(&cfg, 1).unwrap().value_table(), ModelParams::init(&cfg, 1).unwrap().ids.embed);
        cfg.tie_value_embeddings = false;
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(Some(p.value_table()), p.ids.value_embed);
        assert_ne!(p.value_table(), p.ids.embed);
    }
}
