use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Tensor2D};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `[d_model × heads·d_k]`, head `i` owns column block `i`.
    pub w_query: Tensor2D,
    pub w_key: Tensor2D,
    pub w_value: Tensor2D,
    /// `[heads·d_v × d_model]`
    pub w_out: Tensor2D,
    pub ln1_gamma: Tensor2D,
    pub ln1_beta: Tensor2D,
    pub ff_in: Tensor2D,
    pub ff_in_bias: Tensor2D,
    pub ff_out: Tensor2D,
    pub ff_out_bias: Tensor2D,
    pub ln2_gamma: Tensor2D,
    pub ln2_beta: Tensor2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub token_embedding: Tensor2D,
    pub position_embedding: Tensor2D,
    pub layers: Vec<LayerParams>,
    pub pre_classifier: Tensor2D,
    pub pre_classifier_bias: Tensor2D,
    pub classifier: Tensor2D,
    pub classifier_bias: Tensor2D,
}

/// Standard normal truncated to ±2, scaled by `std`.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
        if (-2.0..=2.0).contains(&z) {
            return z * std;
        }
    }
}

fn random_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor2D {
    let mut t = Tensor2D::zeros(rows, cols);
    for v in t.data_mut() {
        *v = truncated_normal(rng, std);
    }
    t
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        Self::init_with_std(config, rng, INIT_STD)
    }

    pub fn init_with_std<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R, std: f64) -> Result<Self, ModelError> {
        Self::build(config, |rows, cols| random_tensor(rng, rows, cols, std))
    }

    /// Every tensor zero, layer-norm scales included. Used as a loading skeleton.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        let mut p = Self::build(config, Tensor2D::zeros)?;
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    fn build(config: &ModelConfig, mut w: impl FnMut(usize, usize) -> Tensor2D) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let token_embedding = w(config.vocab_size, d);
        let position_embedding = w(config.max_positions, d);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                w_query: w(d, d),
                w_key: w(d, d),
                w_value: w(d, d),
                w_out: w(d, d),
                ln1_gamma: Tensor2D::filled(1, d, 1.0),
                ln1_beta: Tensor2D::zeros(1, d),
                ff_in: w(d, config.d_ff),
                ff_in_bias: Tensor2D::zeros(1, config.d_ff),
                ff_out: w(config.d_ff, d),
                ff_out_bias: Tensor2D::zeros(1, d),
                ln2_gamma: Tensor2D::filled(1, d, 1.0),
                ln2_beta: Tensor2D::zeros(1, d),
            });
        }
        let pre_classifier = w(d, d);
        let classifier = w(d, config.num_labels);
        Ok(ModelParams {
            token_embedding,
            position_embedding,
            layers,
            pre_classifier,
            pre_classifier_bias: Tensor2D::zeros(1, d),
            classifier,
            classifier_bias: Tensor2D::zeros(1, config.num_labels),
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        out
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out: Vec<(String, &Tensor2D)> = Vec::new();
        out.push(("token_embedding".into(), &self.token_embedding));
        out.push(("position_embedding".into(), &self.position_embedding));
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.fields() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("pre_classifier".into(), &self.pre_classifier));
        out.push(("pre_classifier_bias".into(), &self.pre_classifier_bias));
        out.push(("classifier".into(), &self.classifier));
        out.push(("classifier_bias".into(), &self.classifier_bias));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut out: Vec<&mut Tensor2D> = Vec::new();
        out.push(&mut self.token_embedding);
        out.push(&mut self.position_embedding);
        for l in &mut self.layers {
            out.extend(l.fields_mut());
        }
        out.push(&mut self.pre_classifier);
        out.push(&mut self.pre_classifier_bias);
        out.push(&mut self.classifier);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor2D> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = Self::expected_shapes(config);
        let actual = self.named_tensors();
        if expected.len() != actual.len() {
            return Err(ModelError::InvalidInput(format!(
                "expected {} tensors, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((name, shape), (_, t)) in expected.iter().zip(&actual) {
            if t.shape() != *shape {
                return Err(ModelError::InvalidInput(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let d = config.d_model;
        let mut out = Vec::new();
        out.push(("token_embedding".into(), (config.vocab_size, d)));
        out.push(("position_embedding".into(), (config.max_positions, d)));
        for i in 0..config.n_layers {
            for (name, shape) in [
                ("w_query", (d, d)),
                ("w_key", (d, d)),
                ("w_value", (d, d)),
                ("w_out", (d, d)),
                ("ln1_gamma", (1, d)),
                ("ln1_beta", (1, d)),
                ("ff_in", (d, config.d_ff)),
                ("ff_in_bias", (1, config.d_ff)),
                ("ff_out", (config.d_ff, d)),
                ("ff_out_bias", (1, d)),
                ("ln2_gamma", (1, d)),
                ("ln2_beta", (1, d)),
            ] {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("pre_classifier".into(), (d, d)));
        out.push(("pre_classifier_bias".into(), (1, d)));
        out.push(("classifier".into(), (d, config.num_labels)));
        out.push(("classifier_bias".into(), (1, config.num_labels)));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }
}

impl LayerParams {
    fn fields(&self) -> [(&'static str, &Tensor2D); 12] {
        [
            ("w_query", &self.w_query),
            ("w_key", &self.w_key),
            ("w_value", &self.w_value),
            ("w_out", &self.w_out),
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("ff_in", &self.ff_in),
            ("ff_in_bias", &self.ff_in_bias),
            ("ff_out", &self.ff_out),
            ("ff_out_bias", &self.ff_out_bias),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor2D; 12] {
        [
            &mut self.w_query,
            &mut self.w_key,
            &mut self.w_value,
            &mut self.w_out,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ff_in,
            &mut self.ff_in_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}
