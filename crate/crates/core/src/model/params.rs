use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::positional::PositionalEncodingTable;
use crate::error::{Error, Result};
use crate::pipeline::{Timeline, TriExample};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::{kaiming_uniform_init, InitSpec};

/// Architecture hyperparameters shared by all three branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_width: usize,
    pub leaky_slope: f64,
    pub layer_norm_eps: f64,
    pub merge_bias: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            d_model: 16,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 1,
            ff_width: 64,
            leaky_slope: 0.01,
            layer_norm_eps: 1e-9,
            merge_bias: true,
        }
    }
}

/// Input geometry of one branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchShape {
    pub features: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub settings: ModelSettings,
    /// Past, present, premonition.
    pub branches: [BranchShape; 3],
}

impl ModelConfig {
    pub fn new(settings: ModelSettings, branches: [BranchShape; 3]) -> Result<Self> {
        let cfg = ModelConfig { settings, branches };
        cfg.validate()?;
        Ok(cfg)
    }

    /// D=4, h=2, one encoder and one decoder layer, T=3 per branch.
    pub fn miniature(features: [usize; 3]) -> Self {
        ModelConfig {
            settings: ModelSettings {
                d_model: 4,
                heads: 2,
                encoder_layers: 1,
                decoder_layers: 1,
                ff_width: 8,
                ..ModelSettings::default()
            },
            branches: features.map(|f| BranchShape {
                features: f,
                steps: 3,
            }),
        }
    }

    /// Branch shapes read off an example's windows.
    pub fn for_example(settings: ModelSettings, ex: &TriExample) -> Result<Self> {
        let branches = Timeline::ALL.map(|t| {
            let w = ex.window(t);
            BranchShape {
                features: w.width,
                steps: w.steps,
            }
        });
        Self::new(settings, branches)
    }

    pub fn head_dim(&self) -> usize {
        self.settings.d_model / self.settings.heads
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        if s.d_model == 0 || s.heads == 0 || s.ff_width == 0 {
            return Err(Error::Config("model widths must be at least 1".into()));
        }
        if !s.d_model.is_multiple_of(s.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                s.d_model, s.heads
            )));
        }
        if !(s.leaky_slope > 0.0 && s.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope {} outside (0, 1)",
                s.leaky_slope
            )));
        }
        if s.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        if let Some(b) = self
            .branches
            .iter()
            .find(|b| b.features == 0 || b.steps == 0)
        {
            return Err(Error::Config(format!(
                "branch shape {b:?} has a zero dimension"
            )));
        }
        Ok(())
    }
}

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    fn push(&mut self, name: String, t: Tensor) -> ParamId {
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Overwrites all values from a flat vector in declaration order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::ValueCount {
                shape: vec![self.numel()],
                expected: self.numel(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub out: ParamId,
    pub out_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub norm1: NormParams,
    pub ff: FeedForwardParams,
    pub norm2: NormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attention: AttentionParams,
    pub norm1: NormParams,
    pub cross_attention: AttentionParams,
    pub norm2: NormParams,
    pub ff: FeedForwardParams,
    pub norm3: NormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams {
    pub input: ParamId,
    pub input_bias: ParamId,
    pub encoder: Vec<EncoderLayerParams>,
    pub decoder: Vec<DecoderLayerParams>,
    /// Learned decoder query token, `1 × D`.
    pub query: ParamId,
}

/// Linear merge of the three branch summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeHead {
    pub past: ParamId,
    pub present: ParamId,
    pub premonition: ParamId,
    pub bias: Option<ParamId>,
}

impl MergeHead {
    pub fn weight(&self, t: Timeline) -> ParamId {
        match t {
            Timeline::Past => self.past,
            Timeline::Present => self.present,
            Timeline::Premonition => self.premonition,
        }
    }
}

/// All learnable weights of the three branches and the merge head.
#[derive(Clone, Debug, PartialEq)]
pub struct MttParams {
    pub config: ModelConfig,
    pub init: InitSpec,
    pub store: ParamStore,
    pub branches: [BranchParams; 3],
    pub merge: MergeHead,
    positional: [PositionalEncodingTable; 3],
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    init: &'a InitSpec,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, shape: [usize; 2]) -> Result<ParamId> {
        let t = kaiming_uniform_init(&shape, self.init.a, self.init.mode, &mut self.rng)?;
        Ok(self.store.push(name, t))
    }

    fn fill(&mut self, name: String, n: usize, value: f64) -> Result<ParamId> {
        Ok(self.store.push(name, Tensor::new(&[n], vec![value; n])?))
    }

    fn attention(&mut self, p: &str, cfg: &ModelConfig) -> Result<AttentionParams> {
        let (d, dk) = (cfg.settings.d_model, cfg.head_dim());
        let heads = (0..cfg.settings.heads)
            .map(|h| {
                Ok(HeadParams {
                    query: self.weight(format!("{p}.head{h}.w_q"), [d, dk])?,
                    key: self.weight(format!("{p}.head{h}.w_k"), [d, dk])?,
                    value: self.weight(format!("{p}.head{h}.w_v"), [d, dk])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionParams {
            heads,
            out: self.weight(format!("{p}.w_o"), [cfg.settings.heads * dk, d])?,
            out_bias: self.fill(format!("{p}.b_o"), d, 0.0)?,
        })
    }

    fn norm(&mut self, p: &str, d: usize) -> Result<NormParams> {
        Ok(NormParams {
            gain: self.fill(format!("{p}.gain"), d, 1.0)?,
            bias: self.fill(format!("{p}.bias"), d, 0.0)?,
        })
    }

    fn ff(&mut self, p: &str, d: usize, width: usize) -> Result<FeedForwardParams> {
        Ok(FeedForwardParams {
            w1: self.weight(format!("{p}.w1"), [d, width])?,
            b1: self.fill(format!("{p}.b1"), width, 0.0)?,
            w2: self.weight(format!("{p}.w2"), [width, d])?,
            b2: self.fill(format!("{p}.b2"), d, 0.0)?,
        })
    }

    fn branch(
        &mut self,
        name: &str,
        shape: BranchShape,
        cfg: &ModelConfig,
    ) -> Result<BranchParams> {
        let d = cfg.settings.d_model;
        let ffw = cfg.settings.ff_width;
        let input = self.weight(format!("{name}.input.w"), [shape.features, d])?;
        let input_bias = self.fill(format!("{name}.input.b"), d, 0.0)?;
        let encoder = (0..cfg.settings.encoder_layers)
            .map(|l| {
                let p = format!("{name}.enc{l}");
                Ok(EncoderLayerParams {
                    attention: self.attention(&format!("{p}.attn"), cfg)?,
                    norm1: self.norm(&format!("{p}.norm1"), d)?,
                    ff: self.ff(&format!("{p}.ff"), d, ffw)?,
                    norm2: self.norm(&format!("{p}.norm2"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.settings.decoder_layers)
            .map(|l| {
                let p = format!("{name}.dec{l}");
                Ok(DecoderLayerParams {
                    self_attention: self.attention(&format!("{p}.self_attn"), cfg)?,
                    norm1: self.norm(&format!("{p}.norm1"), d)?,
                    cross_attention: self.attention(&format!("{p}.cross_attn"), cfg)?,
                    norm2: self.norm(&format!("{p}.norm2"), d)?,
                    ff: self.ff(&format!("{p}.ff"), d, ffw)?,
                    norm3: self.norm(&format!("{p}.norm3"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let query = self.weight(format!("{name}.dec.query"), [1, d])?;
        Ok(BranchParams {
            input,
            input_bias,
            encoder,
            decoder,
            query,
        })
    }
}

impl MttParams {
    /// Fresh parameters: Kaiming-uniform matrices, zero biases, unit norm gains.
    pub fn new(config: ModelConfig, init: InitSpec) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(init.seed),
            init: &init,
        };
        let past = b.branch("past", config.branches[0], &config)?;
        let present = b.branch("present", config.branches[1], &config)?;
        let premonition = b.branch("premonition", config.branches[2], &config)?;
        let d = config.settings.d_model;
        let merge = MergeHead {
            past: b.weight("merge.w_past".into(), [d, 1])?,
            present: b.weight("merge.w_present".into(), [d, 1])?,
            premonition: b.weight("merge.w_premonition".into(), [d, 1])?,
            bias: if config.settings.merge_bias {
                Some(b.fill("merge.bias".into(), 1, 0.0)?)
            } else {
                None
            },
        };
        // The decoder reads position 0, so each table needs at least one row.
        let positional = [0, 1, 2].map(|i| {
            PositionalEncodingTable::new(config.branches[i].steps.max(1), d)
                .expect("validated config")
        });
        Ok(MttParams {
            store: b.store,
            branches: [past, present, premonition],
            merge,
            positional,
            config,
            init,
        })
    }

    pub fn branch(&self, t: Timeline) -> &BranchParams {
        &self.branches[t as usize]
    }

    pub fn positional(&self, t: Timeline) -> &PositionalEncodingTable {
        &self.positional[t as usize]
    }

    /// Records every parameter as a tape leaf; the result is indexed by [`ParamId`].
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.store
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Binds parameters as slices of one flat leaf, for whole-model gradient checks.
    pub fn bind_flat(&self, tape: &mut Tape, flat: Var) -> Result<Vec<Var>> {
        let mut off = 0;
        self.store
            .tensors()
            .iter()
            .map(|t| {
                let n = t.len();
                let piece = tape.slice_rows(flat, off, off + n)?;
                off += n;
                tape.reshape(piece, t.shape())
            })
            .collect()
    }

    /// Parameter ids belonging to one branch, in store order.
    pub fn branch_param_ids(&self, t: Timeline) -> Vec<ParamId> {
        let prefix = format!("{}.", t.name());
        self.store
            .names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(&prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn merge_param_ids(&self) -> Vec<ParamId> {
        self.store
            .names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("merge."))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) -> Result<()> {
        let cur = &mut self.store.tensors_mut()[id.0];
        if cur.shape() != t.shape() {
            return Err(Error::Dimension {
                op: "set_param",
                left: cur.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        *cur = t;
        Ok(())
    }
}
