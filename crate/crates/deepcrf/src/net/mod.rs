//! The compact convolutional identifier: extractor, projection head and
//! classifier, with the two training losses.
//!
//! The extractor maps a 2x52 real decomposition of one CSI vector through two
//! convolutions (1x3 over subcarriers, then 2x3 collapsing the re/im axis),
//! two inception-style spatial blocks (parallel 1x1/1x3/1x5 branches,
//! GELU, one channel LayerNorm per block), a 1x1 channel reduction and a
//! dense layer down to one feature per subcarrier. The projection head is a
//! single dense layer whose output is normalized onto the unit hypersphere
//! for the contrastive stage; the classifier is a single dense layer with a
//! softmax.

pub mod train;

use autodiff::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::config::NetworkSection;
use crate::signal::{CsiRecord, Subcarriers52};
use crate::spectrum::{derive_seed, NUM_SUBCARRIERS};

pub const EMBED_DIM: usize = NUM_SUBCARRIERS;
const CONV1_FILTERS: usize = 64;
const CONV2_FILTERS: usize = 64;
/// Parameter budget: 125k within +-25%.
pub const PARAM_BUDGET: usize = 125_000;
pub const PARAM_BUDGET_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    /// Row 0 = real part, row 1 = imaginary part.
    Iq,
    /// Row 0 = amplitude, row 1 = phase in (-pi, pi].
    AmpPhase,
}

impl InputEncoding {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "iq" => Ok(InputEncoding::Iq),
            "amp-phase" => Ok(InputEncoding::AmpPhase),
            other => Err(Error::Config(format!("unknown input encoding {:?}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_encoding: InputEncoding,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub branch_filters: [usize; 3],
    pub reduce_channels: usize,
}

impl NetworkConfig {
    pub fn new(input_encoding: InputEncoding, num_classes: usize) -> Self {
        NetworkConfig {
            input_encoding,
            num_classes,
            embed_dim: EMBED_DIM,
            branch_filters: [24, 24, 16],
            reduce_channels: 32,
        }
    }

    pub fn from_section(s: &NetworkSection) -> Result<Self> {
        let cfg = NetworkConfig {
            input_encoding: InputEncoding::from_name(&s.input_encoding)?,
            num_classes: s.num_classes,
            embed_dim: EMBED_DIM,
            branch_filters: s.branch_filters,
            reduce_channels: s.reduce_channels,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("num_classes must be >= 2".into()));
        }
        if self.embed_dim != EMBED_DIM {
            return Err(Error::InvalidInput(format!(
                "embed_dim is tied to the subcarrier count ({})",
                EMBED_DIM
            )));
        }
        let branch_total: usize = self.branch_filters.iter().sum();
        if branch_total != CONV2_FILTERS {
            return Err(Error::InvalidInput(format!(
                "spatial-block branches must concatenate back to {} channels, got {}",
                CONV2_FILTERS, branch_total
            )));
        }
        let count = param_count_for(self);
        let lo = (PARAM_BUDGET as f64 * (1.0 - PARAM_BUDGET_TOLERANCE)) as usize;
        let hi = (PARAM_BUDGET as f64 * (1.0 + PARAM_BUDGET_TOLERANCE)) as usize;
        if !(lo..=hi).contains(&count) {
            return Err(Error::InvalidInput(format!(
                "parameter count {} outside budget {}..={}",
                count, lo, hi
            )));
        }
        Ok(())
    }
}

fn param_count_for(cfg: &NetworkConfig) -> usize {
    let [ba, bb, bc] = cfg.branch_filters;
    let conv1 = CONV1_FILTERS * 3 + CONV1_FILTERS;
    let conv2 = CONV2_FILTERS * CONV1_FILTERS * 2 * 3 + CONV2_FILTERS;
    let block = ba * CONV2_FILTERS
        + bb * CONV2_FILTERS * 3
        + bc * CONV2_FILTERS * 5
        + (ba + bb + bc)
        + 2 * CONV2_FILTERS; // layer-norm gain + bias
    let reduce = cfg.reduce_channels * CONV2_FILTERS + cfg.reduce_channels;
    let fc = cfg.reduce_channels * NUM_SUBCARRIERS * cfg.embed_dim + cfg.embed_dim;
    let projection = cfg.embed_dim * cfg.embed_dim + cfg.embed_dim;
    let classifier = cfg.embed_dim * cfg.num_classes + cfg.num_classes;
    conv1 + conv2 + 2 * block + reduce + fc + projection + classifier
}

/// Decompose one CSI vector into the 2x52 real input plane
/// (shape `[1, 2, 52]`: one channel, two rows).
pub fn encode_input(csi: &Subcarriers52, encoding: InputEncoding) -> Tensor {
    let mut data = vec![0.0; 2 * NUM_SUBCARRIERS];
    for (k, v) in csi.iter().enumerate() {
        match encoding {
            InputEncoding::Iq => {
                data[k] = v.re;
                data[NUM_SUBCARRIERS + k] = v.im;
            }
            InputEncoding::AmpPhase => {
                data[k] = v.norm();
                data[NUM_SUBCARRIERS + k] = v.arg();
            }
        }
    }
    Tensor::new(vec![1, 2, NUM_SUBCARRIERS], data).expect("sized")
}

/// Stack records into a `[N, 1, 2, 52]` batch.
pub fn encode_batch(records: &[&CsiRecord], encoding: InputEncoding) -> Tensor {
    let n = records.len();
    let mut data = Vec::with_capacity(n * 2 * NUM_SUBCARRIERS);
    for rec in records {
        data.extend_from_slice(encode_input(&rec.csi, encoding).data());
    }
    Tensor::new(vec![n, 1, 2, NUM_SUBCARRIERS], data).expect("sized")
}

/// Extractor output `r` and unit-norm projection `z` for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
}

/// Per-class probability vector with its argmax verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub probs: Vec<f64>,
    pub label: usize,
}

impl Decision {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities must be a simplex vector (sum {})",
                sum
            )));
        }
        let label = argmax(&probs);
        Ok(Decision { probs, label })
    }
}

/// Index of the largest value; ties break to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// The model: named parameters plus the wiring of the forward pass.
#[derive(Debug, Clone)]
pub struct DeepCrf {
    pub config: NetworkConfig,
    params: Vec<(String, Tensor)>,
}

/// Which trailing head to attach to the extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Projection,
    Classifier,
}

impl DeepCrf {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [ba, bb, bc] = config.branch_filters;
        let rc = config.reduce_channels;
        let ed = config.embed_dim;
        let nc = config.num_classes;

        let mut params: Vec<(String, Tensor)> = Vec::new();
        let mut layer = 0u64;
        let mut init_conv = |name: &str, shape: Vec<usize>, fan_in: usize| {
            layer += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xd0d0 + layer));
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("std");
            (
                name.to_string(),
                Tensor::from_fn(shape, |_| normal.sample(&mut rng)),
            )
        };

        params.push(init_conv("extractor.conv1.w", vec![CONV1_FILTERS, 1, 1, 3], 3));
        params.push(zeros("extractor.conv1.b", vec![CONV1_FILTERS]));
        params.push(init_conv(
            "extractor.conv2.w",
            vec![CONV2_FILTERS, CONV1_FILTERS, 2, 3],
            CONV1_FILTERS * 6,
        ));
        params.push(zeros("extractor.conv2.b", vec![CONV2_FILTERS]));
        for block in 1..=2 {
            params.push(init_conv(
                &format!("extractor.block{}.branch1x1.w", block),
                vec![ba, CONV2_FILTERS, 1, 1],
                CONV2_FILTERS,
            ));
            params.push(zeros(&format!("extractor.block{}.branch1x1.b", block), vec![ba]));
            params.push(init_conv(
                &format!("extractor.block{}.branch1x3.w", block),
                vec![bb, CONV2_FILTERS, 1, 3],
                CONV2_FILTERS * 3,
            ));
            params.push(zeros(&format!("extractor.block{}.branch1x3.b", block), vec![bb]));
            params.push(init_conv(
                &format!("extractor.block{}.branch1x5.w", block),
                vec![bc, CONV2_FILTERS, 1, 5],
                CONV2_FILTERS * 5,
            ));
            params.push(zeros(&format!("extractor.block{}.branch1x5.b", block), vec![bc]));
            params.push((
                format!("extractor.block{}.norm.gain", block),
                Tensor::full(vec![CONV2_FILTERS], 1.0),
            ));
            params.push(zeros(&format!("extractor.block{}.norm.bias", block), vec![CONV2_FILTERS]));
        }
        params.push(init_conv(
            "extractor.reduce.w",
            vec![rc, CONV2_FILTERS, 1, 1],
            CONV2_FILTERS,
        ));
        params.push(zeros("extractor.reduce.b", vec![rc]));
        params.push(init_conv(
            "extractor.fc.w",
            vec![rc * NUM_SUBCARRIERS, ed],
            rc * NUM_SUBCARRIERS,
        ));
        params.push(zeros("extractor.fc.b", vec![ed]));
        params.push(init_conv("projection.fc.w", vec![ed, ed], ed));
        params.push(zeros("projection.fc.b", vec![ed]));
        params.push(init_conv("classifier.fc.w", vec![ed, nc], ed));
        params.push(zeros("classifier.fc.b", vec![nc]));

        Ok(DeepCrf { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.elem_count()).sum()
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<(String, Tensor)> {
        &mut self.params
    }

    /// Replace all parameters; shapes must match this architecture.
    pub fn set_params(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in entries {
            let slot = self
                .params
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| {
                    Error::Train(format!("checkpoint entry {:?} not in this architecture", name))
                })?;
            if slot.1.shape() != tensor.shape() {
                return Err(Error::Train(format!(
                    "checkpoint/architecture mismatch at {:?}: {:?} vs {:?}",
                    name,
                    tensor.shape(),
                    slot.1.shape()
                )));
            }
            slot.1 = tensor.clone();
        }
        Ok(())
    }

    /// Load only the extractor weights from a checkpoint (stage-2 transfer).
    pub fn load_extractor(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let subset: Vec<(String, Tensor)> = entries
            .iter()
            .filter(|(n, _)| n.starts_with("extractor."))
            .cloned()
            .collect();
        if subset.is_empty() {
            return Err(Error::Train("checkpoint holds no extractor entries".into()));
        }
        self.set_params(&subset)
    }

    /// Leaf every parameter into a graph. `trainable` selects which get
    /// gradients; the returned handles parallel `self.params` order.
    pub fn bind(&self, g: &mut Graph, mut trainable: impl FnMut(&str) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(name, t)| g.leaf(t.clone(), trainable(name)))
            .collect()
    }

    fn var(&self, bound: &[Var], name: &str) -> Var {
        let idx = self
            .params
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {:?}", name));
        bound[idx]
    }

    /// Extractor forward: `[N,1,2,52]` input to `r [N,52]`.
    pub fn forward_embed(&self, g: &mut Graph, bound: &[Var], input: Var) -> Result<Var> {
        let p = |name: &str| self.var(bound, name);
        let x = g.conv2d(input, p("extractor.conv1.w"), (0, 1))?;
        let x = g.channel_bias(x, p("extractor.conv1.b"))?;
        let x = g.gelu(x);
        let x = g.conv2d(x, p("extractor.conv2.w"), (0, 1))?;
        let x = g.channel_bias(x, p("extractor.conv2.b"))?;
        let mut x = g.gelu(x);
        for block in 1..=2 {
            let n = |suffix: &str| format!("extractor.block{}.{}", block, suffix);
            let b1 = g.conv2d(x, p(&n("branch1x1.w")), (0, 0))?;
            let b1 = g.channel_bias(b1, p(&n("branch1x1.b")))?;
            let b3 = g.conv2d(x, p(&n("branch1x3.w")), (0, 1))?;
            let b3 = g.channel_bias(b3, p(&n("branch1x3.b")))?;
            let b5 = g.conv2d(x, p(&n("branch1x5.w")), (0, 2))?;
            let b5 = g.channel_bias(b5, p(&n("branch1x5.b")))?;
            let cat = g.concat_channels(&[b1, b3, b5])?;
            let act = g.gelu(cat);
            x = g.layer_norm(act, p(&n("norm.gain")), p(&n("norm.bias")), &[1], 1e-5)?;
        }
        let x = g.conv2d(x, p("extractor.reduce.w"), (0, 0))?;
        let x = g.channel_bias(x, p("extractor.reduce.b"))?;
        let x = g.gelu(x);
        let n = g.value(x).shape()[0];
        let flat = g.reshape(x, vec![n, self.config.reduce_channels * NUM_SUBCARRIERS])?;
        Ok(g.dense(flat, p("extractor.fc.w"), p("extractor.fc.b"))?)
    }

    /// Projection head: `r [N,52]` to unit-norm `z [N,52]`.
    pub fn forward_project(&self, g: &mut Graph, bound: &[Var], r: Var) -> Result<Var> {
        let h = g.dense(r, self.var(bound, "projection.fc.w"), self.var(bound, "projection.fc.b"))?;
        Ok(g.l2_normalize_rows(h, 1e-12)?)
    }

    /// Classifier head: `r [N,52]` to probabilities `[N,num_classes]`.
    pub fn forward_classify(&self, g: &mut Graph, bound: &[Var], r: Var) -> Result<Var> {
        let logits = g.dense(
            r,
            self.var(bound, "classifier.fc.w"),
            self.var(bound, "classifier.fc.b"),
        )?;
        Ok(g.softmax_rows(logits)?)
    }

    /// Inference embeddings (extractor + projection) without gradients.
    pub fn embed_records(&self, records: &[&CsiRecord]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(256) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, |_| false);
            let input = g.constant(encode_batch(chunk, self.config.input_encoding));
            let r = self.forward_embed(&mut g, &bound, input)?;
            let z = self.forward_project(&mut g, &bound, r)?;
            let rv = g.value(r).data();
            let zv = g.value(z).data();
            for i in 0..chunk.len() {
                out.push(Embedding {
                    r: rv[i * EMBED_DIM..(i + 1) * EMBED_DIM].to_vec(),
                    z: zv[i * EMBED_DIM..(i + 1) * EMBED_DIM].to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// Inference decisions without gradients.
    pub fn decide_records(&self, records: &[&CsiRecord]) -> Result<Vec<Decision>> {
        let m = self.config.num_classes;
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(256) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, |_| false);
            let input = g.constant(encode_batch(chunk, self.config.input_encoding));
            let r = self.forward_embed(&mut g, &bound, input)?;
            let probs = self.forward_classify(&mut g, &bound, r)?;
            let pv = g.value(probs).data();
            for i in 0..chunk.len() {
                out.push(Decision::from_probs(pv[i * m..(i + 1) * m].to_vec())?);
            }
        }
        Ok(out)
    }
}

fn zeros(name: &str, shape: Vec<usize>) -> (String, Tensor) {
    (name.to_string(), Tensor::zeros(shape))
}

/// Supervised contrastive loss over unit-norm projections.
///
/// For each anchor with at least one same-label partner, the loss averages
/// `-log(exp(z_i . z_j / tau) / sum_{k != i} exp(z_i . z_k / tau))` over the
/// partners; anchors without a positive are skipped. Errors when every anchor
/// is skipped.
pub fn supcon_loss(g: &mut Graph, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let n = labels.len();
    if g.value(z).shape()[0] != n {
        return Err(Error::Train(format!(
            "supcon_loss: {} labels for {} rows",
            n,
            g.value(z).shape()[0]
        )));
    }
    if tau <= 0.0 {
        return Err(Error::Train("supcon_loss: tau must be positive".into()));
    }
    let mut positives = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] == labels[j] {
                positives[i].push(j);
            }
        }
    }
    let retained: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();
    if retained.is_empty() {
        return Err(Error::Train(
            "supcon_loss: batch unusable, no anchor has a positive".into(),
        ));
    }
    let num_anchors = retained.len() as f64;

    let sims = g.gram(z)?;
    let sims = g.scale(sims, 1.0 / tau);

    // -1/(|A| |J(i)|) on each positive pair; the log-sum-exp of each retained
    // anchor's row (self excluded) enters once with weight 1/|A|.
    let mut pair_weights = vec![0.0; n * n];
    let mut lse_weights = vec![0.0; n];
    for &i in &retained {
        let share = 1.0 / (num_anchors * positives[i].len() as f64);
        for &j in &positives[i] {
            pair_weights[i * n + j] = -share;
        }
        lse_weights[i] = 1.0 / num_anchors;
    }
    let mask = Tensor::from_fn(vec![n, n], |idx| {
        if idx / n == idx % n {
            0.0
        } else {
            1.0
        }
    });
    let lse = g.row_logsumexp_masked(sims, mask)?;
    let pos_term = g.dot_const(sims, Tensor::new(vec![n, n], pair_weights)?)?;
    let lse_term = g.dot_const(lse, Tensor::new(vec![n], lse_weights)?)?;
    g.add(pos_term, lse_term).map_err(Into::into)
}

/// Mean cross-entropy between predicted probabilities `[N,M]` and integer
/// labels, with the log floored at 1e-12.
pub fn ce_loss(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.value(probs).shape().to_vec();
    let (n, m) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::Train(format!(
            "ce_loss: {} labels for {} rows",
            labels.len(),
            n
        )));
    }
    let mut weights = vec![0.0; n * m];
    for (i, &label) in labels.iter().enumerate() {
        if label >= m {
            return Err(Error::Train(format!(
                "ce_loss: label {} out of range for {} classes",
                label, m
            )));
        }
        weights[i * m + label] = -1.0 / n as f64;
    }
    let logs = g.ln_floored(probs, 1e-12);
    g.dot_const(logs, Tensor::new(vec![n, m], weights)?)
        .map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn unit_rows(data: Vec<Vec<f64>>) -> Tensor {
        let n = data.len();
        let d = data[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for row in data {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            flat.extend(row.iter().map(|v| v / norm));
        }
        Tensor::new(vec![n, d], flat).unwrap()
    }

    #[test]
    fn encode_iq_rows() {
        let csi = Subcarriers52::ones();
        let t = encode_input(&csi, InputEncoding::Iq);
        assert_eq!(t.shape(), &[1, 2, 52]);
        assert!(t.data()[..52].iter().all(|v| *v == 1.0));
        assert!(t.data()[52..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encode_amp_phase_of_pure_imaginary() {
        let csi = Subcarriers52::from_fn(|_| Complex64::new(0.0, 1.0)).unwrap();
        let t = encode_input(&csi, InputEncoding::AmpPhase);
        for k in 0..52 {
            assert!((t.data()[k] - 1.0).abs() < 1e-15);
            assert!((t.data()[52 + k] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        }
    }

    #[test]
    fn encoding_roundtrip_identity() {
        let csi = Subcarriers52::from_fn(|k| {
            Complex64::new((k as f64 * 0.31).sin() + 1.2, (k as f64 * 0.17).cos() - 0.4)
        })
        .unwrap();
        let iq = encode_input(&csi, InputEncoding::Iq);
        let ap = encode_input(&csi, InputEncoding::AmpPhase);
        for k in 0..52 {
            let from_ap = Complex64::from_polar(ap.data()[k], ap.data()[52 + k]);
            let from_iq = Complex64::new(iq.data()[k], iq.data()[52 + k]);
            assert!((from_ap - from_iq).norm() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_within_budget() {
        let net = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 19), 1).unwrap();
        let count = net.param_count();
        let lo = (PARAM_BUDGET as f64 * 0.75) as usize;
        let hi = (PARAM_BUDGET as f64 * 1.25) as usize;
        assert!((lo..=hi).contains(&count), "{} params", count);
        assert_eq!(count, param_count_for(&net.config));
    }

    #[test]
    fn forward_shapes_and_simplex() {
        let net = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 19), 2).unwrap();
        let csi = Subcarriers52::ones();
        let rec = CsiRecord {
            csi,
            device_id: 0,
            position_id: 0,
            rx_index: 0,
            snr_db: None,
            channel_tag: 0,
        };
        let emb = net.embed_records(&[&rec]).unwrap();
        assert_eq!(emb[0].r.len(), 52);
        let z_norm: f64 = emb[0].z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((z_norm - 1.0).abs() < 1e-6);
        let dec = net.decide_records(&[&rec]).unwrap();
        assert_eq!(dec[0].probs.len(), 19);
        let sum: f64 = dec[0].probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 5), 3).unwrap();
        let csi = Subcarriers52::from_fn(|k| Complex64::new(0.1 * k as f64, -0.05)).unwrap();
        let rec = CsiRecord {
            csi,
            device_id: 0,
            position_id: 0,
            rx_index: 0,
            snr_db: None,
            channel_tag: 0,
        };
        let a = net.decide_records(&[&rec]).unwrap();
        let b = net.decide_records(&[&rec]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_params() {
        let a = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 5), 7).unwrap();
        let b = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 5), 7).unwrap();
        assert_eq!(a.params(), b.params());
        let c = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 5), 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn checkpoint_shape_mismatch_is_detected() {
        let mut net = DeepCrf::new(NetworkConfig::new(InputEncoding::Iq, 5), 1).unwrap();
        let bad = vec![("extractor.conv1.w".to_string(), Tensor::zeros(vec![3, 3]))];
        assert!(net.set_params(&bad).is_err());
        let unknown = vec![("extractor.missing".to_string(), Tensor::zeros(vec![1]))];
        assert!(net.set_params(&unknown).is_err());
    }

    #[test]
    fn supcon_pair_of_same_class_is_zero() {
        let z = unit_rows(vec![vec![1.0, 0.2, -0.3], vec![-0.4, 0.9, 0.1]]);
        let mut g = Graph::new();
        let zv = g.leaf(z, true);
        let loss = supcon_loss(&mut g, zv, &[4, 4], 0.07).unwrap();
        assert!(g.value(loss).scalar_value().abs() < 1e-9);
    }

    #[test]
    fn supcon_three_samples_matches_direct_enumeration() {
        let rows = vec![
            vec![0.8, -0.1, 0.4],
            vec![0.7, 0.3, -0.2],
            vec![-0.5, 0.6, 0.5],
        ];
        let labels = [0usize, 0, 1];
        let tau = 0.07;
        let z = unit_rows(rows.clone());

        // Direct enumeration of the loss formula.
        let zd = z.data();
        let dot = |a: usize, b: usize| -> f64 {
            (0..3).map(|k| zd[a * 3 + k] * zd[b * 3 + k]).sum::<f64>() / tau
        };
        let mut expected = 0.0;
        let mut anchors = 0.0;
        for i in 0..3 {
            let pos: Vec<usize> = (0..3).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if pos.is_empty() {
                continue;
            }
            anchors += 1.0;
            let denom: f64 = (0..3).filter(|&k| k != i).map(|k| dot(i, k).exp()).sum();
            let mut term = 0.0;
            for &j in &pos {
                term += -(dot(i, j).exp() / denom).ln();
            }
            expected += term / pos.len() as f64;
        }
        expected /= anchors;

        let mut g = Graph::new();
        let zv = g.leaf(z, true);
        let loss = supcon_loss(&mut g, zv, &labels, tau).unwrap();
        assert!(
            (g.value(loss).scalar_value() - expected).abs() < 1e-9,
            "{} vs {}",
            g.value(loss).scalar_value(),
            expected
        );
    }

    #[test]
    fn supcon_invariant_under_sample_permutation() {
        let rows = vec![
            vec![0.8, -0.1, 0.4],
            vec![0.7, 0.3, -0.2],
            vec![-0.5, 0.6, 0.5],
            vec![0.2, 0.2, 0.9],
        ];
        let labels = [0usize, 1, 0, 1];
        let perm = [2usize, 0, 3, 1];
        let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let permuted_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();

        let eval = |rows: Vec<Vec<f64>>, labels: &[usize]| -> f64 {
            let mut g = Graph::new();
            let z = g.leaf(unit_rows(rows), false);
            let loss = supcon_loss(&mut g, z, labels, 0.07).unwrap();
            g.value(loss).scalar_value()
        };
        let a = eval(rows, &labels);
        let b = eval(permuted_rows, &permuted_labels);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn supcon_all_singletons_is_an_error() {
        let z = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut g = Graph::new();
        let zv = g.leaf(z, false);
        assert!(supcon_loss(&mut g, zv, &[0, 1], 0.07).is_err());
    }

    #[test]
    fn ce_loss_anchors() {
        // Exact one-hot prediction -> 0.
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap(), false);
        let loss = ce_loss(&mut g, p, &[1]).unwrap();
        assert!(g.value(loss).scalar_value().abs() < 1e-9);

        // Uniform over 19 classes -> ln 19.
        let mut g = Graph::new();
        let p = g.leaf(Tensor::full(vec![1, 19], 1.0 / 19.0), false);
        let loss = ce_loss(&mut g, p, &[7]).unwrap();
        assert!((g.value(loss).scalar_value() - 19f64.ln()).abs() < 1e-6);
        assert!((19f64.ln() - 2.944439).abs() < 1e-6);
    }

    #[test]
    fn ce_gradient_through_softmax_is_probs_minus_onehot() {
        let logits = Tensor::new(vec![2, 4], vec![0.3, -0.7, 1.2, 0.0, -0.1, 0.4, 0.2, -1.0]).unwrap();
        let labels = [2usize, 1];
        let mut g = Graph::new();
        let lv = g.leaf(logits.clone(), true);
        let probs = g.softmax_rows(lv).unwrap();
        let loss = ce_loss(&mut g, probs, &labels).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(lv).unwrap();
        let p = g.value(probs).data().to_vec();
        for i in 0..2 {
            for m in 0..4 {
                let expected = (p[i * 4 + m] - if labels[i] == m { 1.0 } else { 0.0 }) / 2.0;
                assert!(
                    (grad[i * 4 + m] - expected).abs() < 1e-12,
                    "{} vs {}",
                    grad[i * 4 + m],
                    expected
                );
            }
        }
    }

    #[test]
    fn classifier_argmax_invariant_under_uniform_logit_gain() {
        // Softmax is monotone: scaling all classifier logits by a positive
        // constant cannot change the argmax.
        let logits = [1.2, -0.3, 0.8, 0.0];
        let argmax_of = |scale: f64| {
            let mut g = Graph::new();
            let l = g.leaf(
                Tensor::new(vec![1, 4], logits.iter().map(|v| v * scale).collect()).unwrap(),
                false,
            );
            let p = g.softmax_rows(l).unwrap();
            argmax(g.value(p).data())
        };
        assert_eq!(argmax_of(1.0), 0);
        assert_eq!(argmax_of(3.7), 0);
        assert_eq!(argmax_of(0.01), 0);
    }
}
