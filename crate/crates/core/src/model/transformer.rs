use std::sync::Arc;

use half::bf16;

use super::point::top_two;
use super::weights::{LayerWeights, Weights};
use super::{EmbeddingPoint, LstOutput, ModelConfig, ModelError, RepresentationMap};
use crate::numerics::{PrecisionMode, Reducer, Scalar};

const NORM_EPS: f64 = 1e-6;

#[derive(Debug)]
struct WeightSets {
    fp64: Weights<f64>,
    fp32: Weights<f32>,
    bf16: Weights<bf16>,
}

/// Seeded pre-norm decoder stack with RMS normalization and causal attention.
///
/// The model is immutable; [`ToyModel::with_precision`] and
/// [`ToyModel::with_reduction`] share the weight storage.
#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ModelConfig,
    weights: Arc<WeightSets>,
}

/// Everything a forward pass produces, in the arithmetic type `S`.
struct Trace<S> {
    taps: Vec<Vec<S>>,
    m: Vec<S>,
    logits: Vec<S>,
}

impl ToyModel {
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let fp64 = Weights::generate(&config);
        let weights = WeightSets {
            fp32: fp64.cast(),
            bf16: fp64.cast(),
            fp64,
        };
        Ok(Self {
            config,
            weights: Arc::new(weights),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn master_weights(&self) -> &Weights<f64> {
        &self.weights.fp64
    }

    pub fn with_reduction(&self, reduction: crate::numerics::ReductionOrder) -> Self {
        let mut out = self.clone();
        out.config.reduction = reduction;
        out
    }

    /// Seeded embedding point with this model's shape.
    pub fn seeded_point(&self, seed: u64, scale: f64) -> EmbeddingPoint {
        EmbeddingPoint::seeded(self.config.seq_len, self.config.d_model, seed, scale)
    }

    pub fn seeded_point_with(&self, seed: u64, scale: f64, init: super::PointInit) -> EmbeddingPoint {
        EmbeddingPoint::seeded_with(self.config.seq_len, self.config.d_model, seed, scale, init)
    }

    pub fn forward(&self, point: &EmbeddingPoint) -> Result<LstOutput, ModelError> {
        self.evaluate(point, &[])
    }

    /// Hidden state at the readout position after the embedding stage and
    /// after each layer. The final normalization is part of the last entry,
    /// so it equals [`LstOutput::m`] bitwise.
    pub fn layer_taps(&self, point: &EmbeddingPoint) -> Result<Vec<Vec<f64>>, ModelError> {
        self.taps(point, &[])
    }

    fn check(&self, point: &EmbeddingPoint) -> Result<(), ModelError> {
        point.validate()?;
        if point.d_model != self.config.d_model || point.seq_len != self.config.seq_len {
            return Err(ModelError::ShapeMismatch {
                expected: self.config.seq_len * self.config.d_model,
                got: point.seq_len * point.d_model,
            });
        }
        Ok(())
    }

    fn run<S: Scalar>(
        &self,
        weights: &Weights<S>,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
        want_taps: bool,
    ) -> Result<Trace<S>, ModelError> {
        self.check(point)?;
        let x = point.realize::<S>(terms)?;
        let trace = Pass::new(&self.config, weights).run(x, want_taps);
        if trace.m.iter().chain(&trace.logits).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { stage: "forward" });
        }
        Ok(trace)
    }

    fn dispatch_run(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
        want_taps: bool,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>), ModelError> {
        fn widen<S: Scalar>(t: Trace<S>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
            let w = |v: Vec<S>| v.into_iter().map(Scalar::widen).collect::<Vec<f64>>();
            (
                t.taps.into_iter().map(w).collect(),
                w(t.m),
                w(t.logits),
            )
        }
        Ok(match self.config.precision {
            PrecisionMode::Fp64 => widen(self.run(&self.weights.fp64, point, terms, want_taps)?),
            PrecisionMode::Fp32 => widen(self.run(&self.weights.fp32, point, terms, want_taps)?),
            PrecisionMode::Bf16Emulated => {
                widen(self.run(&self.weights.bf16, point, terms, want_taps)?)
            }
        })
    }
}

impl RepresentationMap for ToyModel {
    fn width(&self) -> usize {
        self.config.d_model
    }

    fn precision(&self) -> PrecisionMode {
        self.config.precision
    }

    fn with_precision(&self, precision: PrecisionMode) -> Self {
        let mut out = self.clone();
        out.config.precision = precision;
        out
    }

    fn evaluate(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<LstOutput, ModelError> {
        let (_, m, logits) = self.dispatch_run(point, terms, false)?;
        Ok(LstOutput::from_parts(m, logits))
    }

    fn taps(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.dispatch_run(point, terms, true)?.0)
    }
}

/// One forward pass worth of scratch state.
struct Pass<'a, S: Scalar> {
    cfg: &'a ModelConfig,
    w: &'a Weights<S>,
    red: Reducer<S>,
    eps: S,
    inv_width: S,
    attn_scale: S,
}

impl<'a, S: Scalar> Pass<'a, S> {
    fn new(cfg: &'a ModelConfig, w: &'a Weights<S>) -> Self {
        Self {
            cfg,
            w,
            red: Reducer::new(cfg.reduction),
            eps: S::round_from(NORM_EPS),
            inv_width: S::round_from(1.0 / cfg.d_model as f64),
            attn_scale: S::round_from(1.0 / (cfg.head_dim() as f64).sqrt()),
        }
    }

    fn run(mut self, mut h: Vec<S>, want_taps: bool) -> Trace<S> {
        let (d, t) = (self.cfg.d_model, self.cfg.seq_len);
        let last = (t - 1) * d..t * d;
        let mut taps = Vec::new();
        if want_taps {
            taps.push(h[last.clone()].to_vec());
        }
        let w = self.w;
        let layers = &w.layers;
        for (i, layer) in layers.iter().enumerate() {
            self.attention_block(layer, &mut h);
            self.ffn_block(layer, &mut h);
            if want_taps && i + 1 < layers.len() {
                taps.push(h[last.clone()].to_vec());
            }
        }
        let mut m = vec![S::zero(); d];
        self.rms_norm(&h[last], &w.final_norm, &mut m);
        let vocab = self.cfg.vocab_size;
        let mut logits = vec![S::zero(); vocab];
        for (k, out) in logits.iter_mut().enumerate() {
            *out = self.red.dot(&w.unembed[k * d..(k + 1) * d], &m);
        }
        if want_taps {
            taps.push(m.clone());
        }
        Trace { taps, m, logits }
    }

    fn rms_norm(&mut self, x: &[S], gain: &[S], out: &mut [S]) {
        let ss = self.red.dot(x, x);
        let inv_rms = S::one() / (ss * self.inv_width + self.eps).sqrt();
        for ((o, &xi), &g) in out.iter_mut().zip(x).zip(gain) {
            *o = xi * inv_rms * g;
        }
    }

    fn matvec(&mut self, w: &[S], x: &[S], out: &mut [S]) {
        let n = x.len();
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.red.dot(&w[r * n..(r + 1) * n], x);
        }
    }

    fn attention_block(&mut self, layer: &LayerWeights<S>, h: &mut [S]) {
        let (d, t) = (self.cfg.d_model, self.cfg.seq_len);
        let (nh, hd) = (self.cfg.n_heads, self.cfg.head_dim());
        let mut n = vec![S::zero(); d];
        let mut q = vec![S::zero(); t * d];
        let mut k = vec![S::zero(); t * d];
        let mut v = vec![S::zero(); t * d];
        for p in 0..t {
            let rows = p * d..(p + 1) * d;
            self.rms_norm(&h[rows.clone()], &layer.attn_norm, &mut n);
            self.matvec(&layer.wq, &n, &mut q[rows.clone()]);
            self.matvec(&layer.wk, &n, &mut k[rows.clone()]);
            self.matvec(&layer.wv, &n, &mut v[rows]);
        }
        let mut mixed = vec![S::zero(); t * d];
        let mut scores = Vec::with_capacity(t);
        for p in 0..t {
            for head in 0..nh {
                let cols = head * hd..(head + 1) * hd;
                let qp = &q[p * d + cols.start..p * d + cols.end];
                scores.clear();
                for s in 0..=p {
                    let ks = &k[s * d + cols.start..s * d + cols.end];
                    scores.push(self.red.dot(qp, ks) * self.attn_scale);
                }
                let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                }
                let total = self.red.sum(&scores);
                for sc in scores.iter_mut() {
                    *sc = *sc / total;
                }
                for j in cols.clone() {
                    mixed[p * d + j] = self.red.dot_strided(&scores, &v, j, d);
                }
            }
        }
        let mut projected = vec![S::zero(); d];
        for p in 0..t {
            self.matvec(&layer.wo, &mixed[p * d..(p + 1) * d], &mut projected);
            for (hi, &o) in h[p * d..(p + 1) * d].iter_mut().zip(&projected) {
                *hi = *hi + o;
            }
        }
    }

    fn ffn_block(&mut self, layer: &LayerWeights<S>, h: &mut [S]) {
        let (d, t, ff) = (self.cfg.d_model, self.cfg.seq_len, self.cfg.d_ff);
        let mut normed = vec![S::zero(); d];
        let mut up = vec![S::zero(); ff];
        let mut down = vec![S::zero(); d];
        for p in 0..t {
            let row = p * d..(p + 1) * d;
            self.rms_norm(&h[row.clone()], &layer.ffn_norm, &mut normed);
            self.matvec(&layer.w_up, &normed, &mut up);
            for (u, &b) in up.iter_mut().zip(&layer.b_up) {
                let z = *u + b;
                // SiLU
                *u = z / (S::one() + (-z).exp());
            }
            self.matvec(&layer.w_down, &up, &mut down);
            for ((hi, &f), &b) in h[row].iter_mut().zip(&down).zip(&layer.b_down) {
                *hi = *hi + (f + b);
            }
        }
    }
}

/// Top-two token indices of a logit vector, for callers that only hold logits.
pub fn leading_pair(logits: &[f64]) -> (usize, usize) {
    let (a, b) = top_two(logits);
    (a, b.unwrap_or(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ReductionOrder;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            vocab_size: 10,
            seq_len: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = ToyModel::build(small()).unwrap();
        let p = m.seeded_point(1, 0.02);
        let a = m.forward(&p).unwrap();
        let b = ToyModel::build(small()).unwrap().forward(&p).unwrap();
        assert!(a.same_representation(&b));
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn seeds_give_different_models() {
        let p = EmbeddingPoint::seeded(3, 16, 1, 0.02);
        let a = ToyModel::build(ModelConfig { seed: 1, ..small() }).unwrap().forward(&p).unwrap();
        let b = ToyModel::build(ModelConfig { seed: 2, ..small() }).unwrap().forward(&p).unwrap();
        assert!(!a.same_representation(&b));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 5,
            ..small()
        };
        assert!(matches!(ToyModel::build(cfg), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn zero_input_has_nonzero_output() {
        let m = ToyModel::build(small()).unwrap();
        let out = m.forward(&EmbeddingPoint::zeros(3, 16)).unwrap();
        assert!(out.is_finite());
        assert!(out.m.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn taps_end_at_the_last_hidden_state() {
        let m = ToyModel::build(small()).unwrap();
        let p = m.seeded_point(4, 0.02);
        let taps = m.layer_taps(&p).unwrap();
        assert_eq!(taps.len(), 3);
        let out = m.forward(&p).unwrap();
        let last: Vec<u64> = taps[2].iter().map(|v| v.to_bits()).collect();
        let m_bits: Vec<u64> = out.m.iter().map(|v| v.to_bits()).collect();
        assert_eq!(last, m_bits);
    }

    #[test]
    fn precision_and_order_change_bits() {
        let m = ToyModel::build(small()).unwrap();
        let p = m.seeded_point(4, 0.02);
        let f64_out = m.with_precision(PrecisionMode::Fp64).forward(&p).unwrap();
        let f32_out = m.forward(&p).unwrap();
        let bf_out = m.with_precision(PrecisionMode::Bf16Emulated).forward(&p).unwrap();
        assert!(!f64_out.same_representation(&f32_out));
        assert!(!f32_out.same_representation(&bf_out));
        let r1 = m.with_reduction(ReductionOrder::Permuted { seed: 1 }).forward(&p).unwrap();
        let r2 = m.with_reduction(ReductionOrder::Permuted { seed: 2 }).forward(&p).unwrap();
        assert!(!r1.same_representation(&r2));
        for v in &bf_out.m {
            assert_eq!(*v, f64::from(half::bf16::from_f64(*v)));
        }
    }

    #[test]
    fn perturbation_terms_apply_in_precision() {
        let m = ToyModel::build(small()).unwrap().with_precision(PrecisionMode::Fp64);
        let p = m.seeded_point(4, 0.02);
        let dir = vec![1.0; 16];
        let moved = m.evaluate(&p, &[(1e-3, &dir)]).unwrap();
        let shifted = m.forward(&p.shifted(1e-3, &dir)).unwrap();
        assert!(moved.same_representation(&shifted));
        assert!(!moved.same_representation(&m.forward(&p).unwrap()));
    }
}
