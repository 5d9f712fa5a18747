//! Self-attention flavors and the pre-norm encoder stack.

mod attention;
mod encoder;

pub use attention::{
    attend_grouped, axile_msa, dp_factorized_msa, msa, plane_axis_msa, stage_layout, MsaParams, PlaneAxisParams, SeqLayout,
    StageRecords,
};
pub use encoder::{encode, encoder_layer, geglu_mlp, AttnParams, Encoder, LayerParams, MlpParams, LN_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Anatomical plane used by the multi-view encoders.
///
/// Axis convention: x runs left-right, y posterior-anterior and z
/// inferior-superior, so each plane is named by the axis orthogonal to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Transverse,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Transverse, Plane::Coronal, Plane::Sagittal];

    pub fn orthogonal_axis(self) -> usize {
        match self {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
            Plane::Transverse => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Transverse => "transverse",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transverse" => Ok(Plane::Transverse),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            _ => Err(config_err!("unknown plane {:?} (expected transverse, coronal or sagittal)", s)),
        }
    }
}

/// Attention factorization of one encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    Vanilla,
    Axile,
    DotProduct,
    /// Plane stage plus orthogonal-axis stage; `dot_product` selects the
    /// head-split form instead of sequential stages.
    PlaneAxis { plane: Plane, dot_product: bool },
}

impl Flavor {
    /// Factorized flavors carry no class token.
    pub fn is_factorized(self) -> bool {
        !matches!(self, Flavor::Vanilla)
    }

    /// How many attention matrices one layer records.
    pub fn stages(self) -> usize {
        match self {
            Flavor::Vanilla | Flavor::DotProduct => 1,
            Flavor::Axile => 3,
            Flavor::PlaneAxis { dot_product: true, .. } => 1,
            Flavor::PlaneAxis { dot_product: false, .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_dim: usize,
    pub flavor: Flavor,
    pub dropout: f64,
    pub rotary: bool,
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return Err(config_err!("model dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.mlp_dim == 0 {
            return Err(config_err!("mlp dim must be positive"));
        }
        match self.flavor {
            Flavor::DotProduct if self.heads % 3 != 0 => {
                return Err(config_err!("dot-product factorization needs heads divisible by 3, got {}", self.heads))
            }
            Flavor::PlaneAxis { dot_product: true, .. } if self.heads % 2 != 0 => {
                return Err(config_err!("plane/axis dot-product attention needs an even head count, got {}", self.heads))
            }
            _ => {}
        }
        if self.rotary && self.head_dim() % 6 != 0 {
            return Err(config_err!("rotary embedding needs head dim divisible by 6, got {}", self.head_dim()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// Row-stochastic `n × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn zeros(n: usize) -> Self {
        AttentionMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn uniform(n: usize) -> Self {
        AttentionMatrix { n, data: vec![1.0 / n as f64; n * n] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Largest deviation of any row sum from 1, or infinity on a negative entry.
    pub fn stochastic_error(&self) -> f64 {
        if self.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return f64::INFINITY;
        }
        (0..self.n).map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &AttentionMatrix) -> AttentionMatrix {
        let n = self.n;
        let mut out = AttentionMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

/// Head-averaged attention for one sample: `layers[l][stage]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<AttentionMatrix>>,
    /// Whether token 0 of every matrix is a class token.
    pub has_class_token: bool,
}

impl AttentionRecord {
    pub fn stage_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn tokens(&self) -> Option<usize> {
        self.layers.first().and_then(|l| l.first()).map(|m| m.n)
    }
}

/// Per-forward switches: dropout, attention capture and the dropout RNG.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub training: bool,
    pub record: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Ctx { training: false, record: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn recording() -> Self {
        Ctx { record: true, ..Self::eval() }
    }

    pub fn train(seed: u64) -> Self {
        Ctx { training: true, record: false, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// Standard deviation of the truncated-normal projection initializer.
pub const INIT_STD: f64 = 0.02;
