//! The assembled extrapolation model.
//!
//! A forward pass reads the observed prefix of a curve with the recurrent
//! encoder, samples the initial latent state from the resulting posterior,
//! embeds the architecture graph, integrates the latent state through the
//! graph-conditioned vector field across the remaining epoch grid, and
//! decodes each state to a scalar prediction.  Training maximizes the
//! evidence lower bound: Gaussian observation likelihood minus a weighted
//! KL divergence from the posterior to a standard normal prior.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_store, NodeId, ParamStore, Tape};
use crate::data::{standard_normal, Metric};
use crate::error::{Error, Result};
use crate::graph::ArchitectureGraph;
use crate::graph_encoder::{encode_architecture, zg_on_tape, GraphEncoderParams, Pooling};
use crate::ode::{decode, integrate, ode_func, DecNodes, DecoderParams, OdeFuncParams, OdeNodes};
use crate::seq_encoder::{
    encode_observations, sample_latent, sample_on_tape, ObservedPrefix, PosteriorStats,
    SeqEncoderParams, SeqNodes,
};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Scaling applied to curve values before they enter the model (and undone
/// on predictions). Accuracies are already in [0,1] and pass through; losses
/// train better as standardized log-losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    LogStandardized { mean: f64, std: f64 },
}

impl TargetTransform {
    /// Standardization constants from the log of all training values.
    pub fn fit_log(values: impl Iterator<Item = f64>) -> Self {
        let logs: Vec<f64> = values.map(|v| v.max(1e-12).ln()).collect();
        let n = logs.len().max(1) as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        TargetTransform::LogStandardized { mean, std: var.sqrt().max(1e-8) }
    }

    pub fn apply(&self, y: f64) -> f64 {
        match self {
            TargetTransform::Identity => y,
            TargetTransform::LogStandardized { mean, std } => (y.max(1e-12).ln() - mean) / std,
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match self {
            TargetTransform::Identity => v,
            TargetTransform::LogStandardized { mean, std } => (v * std + mean).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Observed epochs n; predictions cover n+1..m.
    pub condition_length: usize,
    /// Full curve length m the model is trained against.
    pub m: usize,
    pub t_max: f64,
    pub metric: Metric,
    /// Replace the graph embedding with zeros everywhere.
    pub ablate_graph: bool,
    pub obs_noise: f64,
    pub kl_weight: f64,
    pub pooling: Pooling,
    pub target_transform: TargetTransform,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidInput("latent_dim must be positive".into()));
        }
        if self.condition_length == 0 || self.condition_length >= self.m {
            return Err(Error::InvalidInput(format!(
                "condition_length must satisfy 0 < n < m, got n={} m={}",
                self.condition_length, self.m
            )));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidInput(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.obs_noise > 0.0) {
            return Err(Error::InvalidInput(format!(
                "obs_noise must be positive, got {}",
                self.obs_noise
            )));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "kl_weight must be nonnegative, got {}",
                self.kl_weight
            )));
        }
        Ok(())
    }

    pub fn delta_t(&self) -> f64 {
        self.t_max / self.m as f64
    }

    /// Epoch times t_1..t_n of the observed window.
    pub fn prefix_times(&self) -> Vec<f64> {
        let dt = self.delta_t();
        (1..=self.condition_length).map(|i| i as f64 * dt).collect()
    }

    /// Epoch times t_{n+1}..t_m the model predicts.
    pub fn prediction_times(&self) -> Vec<f64> {
        let dt = self.delta_t();
        (self.condition_length + 1..=self.m).map(|i| i as f64 * dt).collect()
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ModelParams {
    pub seq: SeqEncoderParams,
    pub graph: GraphEncoderParams,
    pub ode: OdeFuncParams,
    pub dec: DecoderParams,
}

#[derive(Debug)]
pub struct Model {
    pub store: ParamStore,
    pub params: ModelParams,
    pub config: ModelConfig,
}

pub(crate) struct ForwardPass {
    pub pred_nodes: Vec<NodeId>,
    pub mu: NodeId,
    pub sigma: NodeId,
}

impl Model {
    /// Fresh model with randomly initialized weights. Registration order is
    /// fixed so parameter names and ids are stable across runs.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Model> {
        config.validate()?;
        let d = config.latent_dim;
        let mut store = ParamStore::new();
        let seq = SeqEncoderParams::init(&mut store, d, rng);
        let graph = GraphEncoderParams::init(&mut store, d, config.pooling, rng);
        let ode = OdeFuncParams::init(&mut store, d, rng);
        // A small nonlinear readout: the latent flows are smooth but the
        // observed metrics are warped (e.g. accuracy saturates), and a
        // purely linear decode leaves that warp to the ODE alone.
        let dec = DecoderParams::init_mlp(&mut store, d, d, rng);
        Ok(Model { store, params: ModelParams { seq, graph, ode, dec }, config })
    }

    /// Build one forward pass on the tape. `prefix` is already in model
    /// space (transformed); `noise` is the reparameterization draw.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        prefix: &ObservedPrefix,
        pred_times: &[f64],
        graph: &ArchitectureGraph,
        noise: &[f64],
    ) -> Result<ForwardPass> {
        if noise.len() != self.config.latent_dim {
            return Err(Error::InvalidInput(format!(
                "noise has {} entries, latent_dim is {}",
                noise.len(),
                self.config.latent_dim
            )));
        }
        if pred_times.is_empty() {
            return Err(Error::InvalidInput("no prediction times".into()));
        }
        if let Some(&last_obs) = prefix.times.last() {
            if pred_times[0] <= last_obs {
                return Err(Error::InvalidInput(format!(
                    "first prediction time {} does not follow the observed window ending at {last_obs}",
                    pred_times[0]
                )));
            }
        }

        let seq_nodes = SeqNodes::register(tape, &self.store, &self.params.seq);
        let (mu, sigma) = seq_nodes.encode(tape, prefix)?;
        let z0 = sample_on_tape(tape, mu, sigma, noise)?;

        let zg = if self.config.ablate_graph {
            tape.constant(Tensor::vector(vec![0.0; self.config.latent_dim]))
        } else {
            zg_on_tape(tape, &self.store, &self.params.graph, graph)?
        };

        let ode_nodes = OdeNodes::register(tape, &self.store, &self.params.ode);
        let traj = ode_nodes.integrate(tape, z0, zg, pred_times, 1)?;

        let dec_nodes = DecNodes::register(tape, &self.store, &self.params.dec);
        let pred_nodes = traj
            .iter()
            .map(|&z| dec_nodes.decode(tape, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass { pred_nodes, mu, sigma })
    }

    /// Plain-value forward pass; returns model-space predictions (one per
    /// prediction time) and the posterior the sample came from.
    pub fn forward(
        &self,
        prefix: &ObservedPrefix,
        pred_times: &[f64],
        graph: &ArchitectureGraph,
        noise: &[f64],
    ) -> Result<(Vec<f64>, PosteriorStats)> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, prefix, pred_times, graph, noise)?;
        let preds = pass.pred_nodes.iter().map(|&n| tape.value(n).item()).collect();
        Ok((
            preds,
            PosteriorStats {
                mu: tape.value(pass.mu).data().to_vec(),
                sigma: tape.value(pass.sigma).data().to_vec(),
            },
        ))
    }

    /// Observed raw prefix → ObservedPrefix in model space, on the model's
    /// epoch grid.
    pub fn prepare_prefix(&self, raw: &[f64]) -> Result<ObservedPrefix> {
        if raw.len() != self.config.condition_length {
            return Err(Error::InvalidInput(format!(
                "prefix has {} epochs, model conditions on {}",
                raw.len(),
                self.config.condition_length
            )));
        }
        let values = raw.iter().map(|&y| self.config.target_transform.apply(y)).collect();
        ObservedPrefix::new(values, self.config.prefix_times())
    }

    /// Monte-Carlo extrapolation in raw metric units.  Runs `samples`
    /// forward passes with independent posterior noise and returns the
    /// per-epoch mean and population standard deviation.  With samples = 1
    /// the noise is zero, giving the posterior-mean trajectory and a zero
    /// std curve.
    pub fn extrapolate(
        &self,
        raw_prefix: &[f64],
        graph: &ArchitectureGraph,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if samples == 0 {
            return Err(Error::InvalidInput("samples must be at least 1".into()));
        }
        let prefix = self.prepare_prefix(raw_prefix)?;
        let pred_times = self.config.prediction_times();
        let d = self.config.latent_dim;

        // The posterior and graph embedding are sample-independent; compute
        // them once and integrate per sample through the plain-value path.
        let stats = encode_observations(&prefix, &self.params.seq, &self.store)?;
        let zg = if self.config.ablate_graph {
            vec![0.0; d]
        } else {
            encode_architecture(graph, &self.params.graph, &self.store)?
        };

        let steps = pred_times.len();
        let mut mean = vec![0.0; steps];
        let mut sq = vec![0.0; steps];
        for _ in 0..samples {
            let noise: Vec<f64> = if samples == 1 {
                vec![0.0; d]
            } else {
                (0..d).map(|_| standard_normal(rng)).collect()
            };
            let z0 = sample_latent(&stats, &noise);
            // Infallible here: z and zg both have latent_dim entries.
            let field = |z: &[f64]| {
                ode_func(z, &zg, &self.params.ode, &self.store).expect("latent dims consistent")
            };
            let traj = integrate(&field, &z0, &pred_times, 1)?;
            for (i, z) in traj.iter().enumerate() {
                let y = self
                    .config
                    .target_transform
                    .invert(decode(z, &self.params.dec, &self.store)?);
                mean[i] += y;
                sq[i] += y * y;
            }
        }
        let k = samples as f64;
        for i in 0..steps {
            mean[i] /= k;
            // Population variance; exactly zero when every sample agrees.
            let var = (sq[i] / k - mean[i] * mean[i]).max(0.0);
            sq[i] = var.sqrt();
        }
        Ok((mean, sq))
    }

    /// Finite-difference audit of the training objective: compares
    /// d(−ELBO)/dθ from the tape against central differences around every
    /// parameter coordinate and returns the worst relative error.  Rebuilds
    /// the full pass (encode → embed → integrate → decode → ELBO) twice per
    /// coordinate, so cost is O(P · forward) — a test surface, not a
    /// training path.  `raw_targets` covers epochs n+1..m in metric units;
    /// `noise` is one fixed reparameterization draw.
    pub fn check_gradients(
        &self,
        raw_prefix: &[f64],
        raw_targets: &[f64],
        graph: &ArchitectureGraph,
        noise: &[f64],
        eps: f64,
    ) -> Result<f64> {
        let prefix = self.prepare_prefix(raw_prefix)?;
        let times = self.config.prediction_times();
        if raw_targets.len() != times.len() {
            return Err(Error::InvalidInput(format!(
                "{} targets for {} prediction epochs",
                raw_targets.len(),
                times.len()
            )));
        }
        let targets: Vec<f64> =
            raw_targets.iter().map(|&y| self.config.target_transform.apply(y)).collect();
        grad_check_store(
            |tape, store| {
                let m = Model {
                    store: store.clone(),
                    params: ModelParams {
                        seq: self.params.seq.clone(),
                        graph: self.params.graph.clone(),
                        ode: self.params.ode.clone(),
                        dec: self.params.dec.clone(),
                    },
                    config: self.config.clone(),
                };
                let pass = m.forward_on_tape(tape, &prefix, &times, graph, noise)?;
                let e = elbo_on_tape(
                    tape,
                    &pass.pred_nodes,
                    &targets,
                    pass.mu,
                    pass.sigma,
                    m.config.latent_dim,
                    m.config.obs_noise,
                    m.config.kl_weight,
                )?;
                Ok(tape.scale(e, -1.0))
            },
            &self.store,
            eps,
        )
    }
}

// ---------------------------------------------------------------------------
// ELBO
// ---------------------------------------------------------------------------

/// KL(N(mu, diag(sigma²)) ‖ N(0, I)) = ½ Σ_j (mu_j² + sigma_j² − 1 − 2 ln sigma_j).
pub fn kl_standard_normal(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}

/// Same KL as a tape node.
pub(crate) fn kl_on_tape(tape: &mut Tape, mu: NodeId, sigma: NodeId, dim: usize) -> Result<NodeId> {
    let mu_sq = tape.square(mu);
    let sig_sq = tape.square(sigma);
    let log_sig = tape.log(sigma);
    let s_mu = tape.sum(mu_sq);
    let s_sig = tape.sum(sig_sq);
    let s_log = tape.sum(log_sig);
    let quad = tape.add(s_mu, s_sig)?;
    let neg2log = tape.scale(s_log, -2.0);
    let inner = tape.add(quad, neg2log)?;
    let shifted = tape.add_const(inner, -(dim as f64));
    Ok(tape.scale(shifted, 0.5))
}

/// ELBO node: Σ_i log N(y_i | ŷ_i, obs_noise²) − kl_weight·KL. Targets are
/// model-space values aligned with `pred_nodes`.
pub(crate) fn elbo_on_tape(
    tape: &mut Tape,
    pred_nodes: &[NodeId],
    targets: &[f64],
    mu: NodeId,
    sigma: NodeId,
    latent_dim: usize,
    obs_noise: f64,
    kl_weight: f64,
) -> Result<NodeId> {
    if pred_nodes.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "elbo",
            details: format!("{} predictions vs {} targets", pred_nodes.len(), targets.len()),
        });
    }
    if pred_nodes.is_empty() {
        return Err(Error::InvalidInput("elbo needs at least one prediction".into()));
    }
    let mut sum_sq: Option<NodeId> = None;
    for (&p, &y) in pred_nodes.iter().zip(targets) {
        let t = tape.constant_scalar(y);
        let d = tape.sub(p, t)?;
        let s = tape.square(d);
        sum_sq = Some(match sum_sq {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let sum_sq = sum_sq.expect("nonempty");
    let scaled = tape.scale(sum_sq, -1.0 / (2.0 * obs_noise * obs_noise));
    let log_norm = -(obs_noise * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let recon = tape.add_const(scaled, targets.len() as f64 * log_norm);

    let kl = kl_on_tape(tape, mu, sigma, latent_dim)?;
    let kl_w = tape.scale(kl, kl_weight);
    tape.sub(recon, kl_w)
}

/// Closed-form ELBO for given predictions; the reference the tape version
/// is tested against and the value reported in logs.
pub fn elbo(
    pred: &[f64],
    target: &[f64],
    stats: &PosteriorStats,
    obs_noise: f64,
    kl_weight: f64,
) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "elbo",
            details: format!("{} predictions vs {} targets", pred.len(), target.len()),
        });
    }
    let log_norm = -(obs_noise * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let recon: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| log_norm - (y - p) * (y - p) / (2.0 * obs_noise * obs_noise))
        .sum();
    Ok(recon - kl_weight * kl_standard_normal(&stats.mu, &stats.sigma))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TensorDto {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDto {
    format_version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorDto>,
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .store
            .iter()
            .map(|(_, name, t)| {
                (name.to_string(), TensorDto { shape: t.shape().to_vec(), values: t.data().to_vec() })
            })
            .collect();
        let dto = CheckpointDto {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            tensors,
        };
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &dto)?;
        use std::io::Write;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file = std::fs::File::open(path)?;
        Self::load_dto(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Parse a checkpoint held in memory (e.g. embedded in a binary that
    /// has no filesystem).
    pub fn from_json(text: &str) -> Result<Model> {
        Self::load_dto(serde_json::from_str(text)?)
    }

    fn load_dto(dto: CheckpointDto) -> Result<Model> {
        if dto.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (this build reads {})",
                dto.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        // Rebuild the parameter skeleton, then overwrite every tensor from
        // the file; names must match in both directions.
        let mut model = Model::new(dto.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut filled = std::collections::HashSet::new();
        for (name, t) in dto.tensors {
            let id = model.store.id_by_name(&name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint tensor `{name}` is not a model parameter"))
            })?;
            if model.store.get(id).shape() != t.shape.as_slice()
                || t.values.len() != t.shape.iter().product::<usize>().max(1)
            {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape,
                    model.store.get(id).shape()
                )));
            }
            model.store.set(id, Tensor::new(t.shape, t.values));
            filled.insert(name);
        }
        for (_, name, _) in model.store.iter() {
            if !filled.contains(name) {
                return Err(Error::Checkpoint(format!("checkpoint is missing tensor `{name}`")));
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        generate_synthetic_dataset, GenerateConfig, HyperRanges,
    };
    use crate::graph::GraphKind;
    use crate::optim::AdamW;

    fn test_config(d: usize, n: usize, m: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: d,
            condition_length: n,
            m,
            t_max: 1.0,
            metric: Metric::TestAccuracy,
            ablate_graph: false,
            obs_noise: 0.05,
            kl_weight: 1.0,
            pooling: Pooling::Mean,
            target_transform: TargetTransform::Identity,
        }
    }

    fn small_graph() -> ArchitectureGraph {
        ArchitectureGraph::new(
            GraphKind::Mlp,
            5,
            vec![(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 3, 1), (3, 4, 1)],
        )
        .unwrap()
    }

    fn ramp_prefix(model: &Model) -> ObservedPrefix {
        let n = model.config.condition_length;
        let raw: Vec<f64> = (1..=n).map(|i| 0.3 + 0.04 * i as f64).collect();
        model.prepare_prefix(&raw).unwrap()
    }

    #[test]
    fn zero_field_freezes_the_latent_state() {
        let mut model = Model::new(test_config(3, 4, 10), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for name in ["ode.w1", "ode.b1", "ode.w2", "ode.b2"] {
            let id = model.store.id_by_name(name).unwrap();
            let zero = Tensor::zeros_like(model.store.get(id));
            model.store.set(id, zero);
        }
        let prefix = ramp_prefix(&model);
        let graph = small_graph();
        let (preds, stats) = model
            .forward(&prefix, &model.config.prediction_times(), &graph, &[0.0; 3])
            .unwrap();
        assert_eq!(preds.len(), 6);
        for p in &preds[1..] {
            assert_eq!(*p, preds[0]);
        }
        // With zero noise the frozen state is the posterior mean.
        let expected = decode(&stats.mu, &model.params.dec, &model.store).unwrap();
        assert!((preds[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic_for_fixed_noise() {
        let model = Model::new(test_config(4, 3, 9), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let prefix = ramp_prefix(&model);
        let graph = small_graph();
        let times = model.config.prediction_times();
        let noise = vec![0.3, -0.7, 0.1, 0.0];
        let (a, _) = model.forward(&prefix, &times, &graph, &noise).unwrap();
        let (b, _) = model.forward(&prefix, &times, &graph, &noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_matches_hand_composition_of_the_stages() {
        // Pipeline oracle: run the four published plain-value operations by
        // hand and compare with the fused forward pass.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::new(test_config(2, 3, 6), &mut rng).unwrap();
        // Give the ODE output layer nonzero weights so the field actually
        // bends the trajectory.
        let id = model.store.id_by_name("ode.w2").unwrap();
        model
            .store
            .set(id, Tensor::matrix(2, 2, vec![0.2, -0.1, 0.05, 0.15]));
        let prefix = ramp_prefix(&model);
        let graph = small_graph();
        let times = model.config.prediction_times();
        let noise = vec![0.5, -0.25];

        let (fused, fused_stats) = model.forward(&prefix, &times, &graph, &noise).unwrap();

        let stats = encode_observations(&prefix, &model.params.seq, &model.store).unwrap();
        let z0 = sample_latent(&stats, &noise);
        let zg = encode_architecture(&graph, &model.params.graph, &model.store).unwrap();
        let field =
            |z: &[f64]| ode_func(z, &zg, &model.params.ode, &model.store).unwrap();
        let traj = integrate(&field, &z0, &times, 1).unwrap();
        assert_eq!(traj.len(), fused.len());
        for (p, z) in fused.iter().zip(&traj) {
            let y = decode(z, &model.params.dec, &model.store).unwrap();
            assert!((p - y).abs() < 1e-12, "{p} vs {y}");
        }
        for (a, b) in fused_stats.mu.iter().zip(&stats.mu) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn elbo_examples() {
        // Perfect predictions with a prior-matched posterior: only the
        // normalization constant remains.
        let stats = PosteriorStats { mu: vec![0.0, 0.0], sigma: vec![1.0, 1.0] };
        let target = vec![0.4, 0.5, 0.6];
        let sigma_obs = 0.05;
        let got = elbo(&target, &target, &stats, sigma_obs, 1.0).unwrap();
        let expected = 3.0 * -(sigma_obs * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((got - expected).abs() < 1e-12);

        // Unit-shifted posterior mean: KL is ½ per coordinate.
        assert!((kl_standard_normal(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_kl_matches_closed_form() {
        let mu = vec![0.7, -0.3];
        let sigma = vec![1.3, 0.6];
        let closed = kl_standard_normal(&mu, &sigma);
        // E_q[log q(z) − log p(z)] with z = mu + sigma·eps, densities expanded.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut acc = 0.0;
        let samples = 100_000;
        for _ in 0..samples {
            for (m, s) in mu.iter().zip(&sigma) {
                let eps = standard_normal(&mut rng);
                let z = m + s * eps;
                let log_q = -0.5 * eps * eps - s.ln();
                let log_p = -0.5 * z * z;
                acc += log_q - log_p;
            }
        }
        let mc = acc / samples as f64;
        assert!(
            (mc - closed).abs() < 0.02 * closed.abs().max(1.0),
            "mc {mc} vs closed {closed}"
        );
    }

    #[test]
    fn tape_elbo_matches_closed_form() {
        let mut tape = Tape::new();
        let preds = [0.41, 0.52, 0.58];
        let targets = [0.4, 0.5, 0.6];
        let mu_v = vec![0.2, -0.4];
        let sig_v = vec![0.9, 1.4];
        let pred_nodes: Vec<NodeId> =
            preds.iter().map(|&p| tape.constant_scalar(p)).collect();
        let mu = tape.constant(Tensor::vector(mu_v.clone()));
        let sigma = tape.constant(Tensor::vector(sig_v.clone()));
        let node = elbo_on_tape(&mut tape, &pred_nodes, &targets, mu, sigma, 2, 0.05, 0.7).unwrap();
        let stats = PosteriorStats { mu: mu_v, sigma: sig_v };
        let reference = elbo(&preds, &targets, &stats, 0.05, 0.7).unwrap();
        assert!((tape.value(node).item() - reference).abs() < 1e-12);
    }

    #[test]
    fn stronger_kl_weight_never_increases_the_optimal_kl() {
        // One-observation toy: fit (mu, pre-sigma) to a target under the
        // negative ELBO for increasing kl_weight; the KL at the optimum
        // must be nonincreasing in the weight.
        let mut kls = Vec::new();
        for &w in &[0.3, 1.0, 3.0] {
            let mut store = ParamStore::new();
            let mu_id = store.add("mu", Tensor::vector(vec![0.0]));
            let pre_id = store.add("pre_sigma", Tensor::vector(vec![0.0]));
            let mut opt = AdamW::new(&store, 0.05, 0.0);
            for _ in 0..400 {
                let mut tape = Tape::new();
                let mu = tape.param(&store, mu_id);
                let pre = tape.param(&store, pre_id);
                let sp = tape.softplus(pre);
                let sigma = tape.add_const(sp, 1e-4);
                let pred = tape.sum(mu);
                let e = elbo_on_tape(&mut tape, &[pred], &[0.8], mu, sigma, 1, 0.1, w).unwrap();
                let loss = tape.scale(e, -1.0);
                let grads = tape.backward(loss, &store).unwrap();
                opt.step(&mut store, &grads);
            }
            let mu = store.get(mu_id).data()[0];
            let pre = store.get(pre_id).data()[0];
            let sigma = (pre.exp() + 1.0).ln().max(1e-12) + 1e-4;
            kls.push(kl_standard_normal(&[mu], &[sigma]));
        }
        assert!(kls[0] >= kls[1] - 1e-9 && kls[1] >= kls[2] - 1e-9, "{kls:?}");
    }

    #[test]
    fn ablated_model_ignores_the_graph() {
        let mut config = test_config(3, 3, 8);
        config.ablate_graph = true;
        let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let prefix = ramp_prefix(&model);
        let times = model.config.prediction_times();
        let g1 = small_graph();
        let g2 = ArchitectureGraph::new(GraphKind::Mlp, 2, vec![(0, 1, 1)]).unwrap();
        let noise = vec![0.4, 0.1, -0.2];
        let (a, _) = model.forward(&prefix, &times, &g1, &noise).unwrap();
        let (b, _) = model.forward(&prefix, &times, &g2, &noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_sample_extrapolation_has_zero_spread() {
        let model = Model::new(test_config(3, 4, 12), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let raw: Vec<f64> = (1..=4).map(|i| 0.3 + 0.05 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mean, std) = model.extrapolate(&raw, &small_graph(), 1, &mut rng).unwrap();
        assert_eq!(mean.len(), 8);
        assert!(std.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn many_sample_extrapolation_is_finite_and_nonnegative() {
        let model = Model::new(test_config(3, 4, 12), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let raw: Vec<f64> = (1..=4).map(|i| 0.3 + 0.05 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mean, std) = model.extrapolate(&raw, &small_graph(), 100, &mut rng).unwrap();
        assert!(mean.iter().all(|m| m.is_finite()));
        assert!(std.iter().all(|&s| s.is_finite() && s >= 0.0));
    }

    #[test]
    fn sample_mean_converges_at_root_k() {
        let model = Model::new(test_config(2, 3, 6), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let raw = vec![0.35, 0.4, 0.44];
        let graph = small_graph();
        let run = |k: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.extrapolate(&raw, &graph, k, &mut rng).unwrap().0
        };
        let reference = run(32_768, 100);
        let err = |mean: &[f64]| {
            mean.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        // Average the error over independent seeds: a single draw is too noisy
        // to resolve the 8x gap between 64 and 4096 samples.
        let avg = |k: usize, seed0: u64| -> f64 {
            (0..12).map(|i| err(&run(k, seed0 + i))).sum::<f64>() / 12.0
        };
        let e_small = avg(64, 101);
        let e_big = avg(4096, 201);
        assert!(e_big < e_small / 2.0, "{e_big} vs {e_small}");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_everything() {
        let dir = std::env::temp_dir().join("lcgode-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("{}-ckpt.json", std::process::id()));

        let mut config = test_config(3, 4, 10);
        config.metric = Metric::TestLoss;
        config.target_transform = TargetTransform::LogStandardized { mean: -0.3, std: 0.8 };
        let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();

        assert_eq!(loaded.config, model.config);
        for ((_, name_a, t_a), (_, name_b, t_b)) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(t_a.shape(), t_b.shape());
            assert_eq!(t_a.data(), t_b.data());
        }
        let raw = vec![0.9, 0.8, 0.7, 0.65];
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        let (m1, _) = model.extrapolate(&raw, &small_graph(), 1, &mut r1).unwrap();
        let (m2, _) = loaded.extrapolate(&raw, &small_graph(), 1, &mut r2).unwrap();
        assert_eq!(m1, m2);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn checkpoint_rejects_unknown_version_and_missing_tensors() {
        let dir = std::env::temp_dir().join("lcgode-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("{}-ckpt-bad.json", std::process::id()));

        let model = Model::new(test_config(2, 3, 8), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        model.save(&path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();

        v["format_version"] = serde_json::json!(2);
        std::fs::write(&path, v.to_string()).unwrap();
        let err = Model::load(&path).unwrap_err().to_string();
        assert!(err.contains("format_version"), "{err}");

        v["format_version"] = serde_json::json!(1);
        v["tensors"].as_object_mut().unwrap().remove("ode.w1");
        std::fs::write(&path, v.to_string()).unwrap();
        let err = Model::load(&path).unwrap_err().to_string();
        assert!(err.contains("ode.w1"), "{err}");
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn gradients_of_the_full_objective_match_finite_differences() {
        // End-to-end gradient check across every parameter: encoder, graph
        // embedding with learnable pooling, field, decoder.
        let mut config = test_config(2, 3, 8);
        config.pooling = Pooling::Learnable;
        let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let trials = generate_synthetic_dataset(&GenerateConfig {
            num_trials: 4,
            m: 8,
            noise: 0.0,
            seed: 2,
            ranges: HyperRanges {
                units: (16.0, 24.0),
                num_layers: (1, 2),
                ..HyperRanges::default()
            },
            ..GenerateConfig::default()
        })
        .unwrap();
        let trial = &trials[0];
        let curve = trial.curve(Metric::TestAccuracy).unwrap();
        let max_rel = model
            .check_gradients(
                &curve.values[..3],
                &curve.values[3..],
                &trial.graph,
                &[0.37, -0.61],
                1e-5,
            )
            .unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }
}
