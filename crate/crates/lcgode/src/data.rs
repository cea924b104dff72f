//! Learning-curve trials: generation, serialization, and splits.
//!
//! A trial couples an architecture graph and its training hyperparameters
//! with the curves recorded while that architecture was trained.  Synthetic
//! trials come from closed-form gradient flow on a diagonal quadratic loss:
//! with loss L(Θ) = ½ Σ_k λ_k Θ_k² and dynamics dΘ/dt = −∂L/∂Θ, the loss
//! along the flow is L(t) = Σ_k ½ λ_k Θ_{0,k}² e^{−2 λ_k t} and satisfies
//! dL/dt = −|∂L/∂Θ|² exactly, which gives every generated curve an analytic
//! oracle.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArchitectureGraph, GraphKind};
use crate::graph_encoder::node_features;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TestLoss,
    TestAccuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::TestLoss => "test_loss",
            Metric::TestAccuracy => "test_accuracy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "test_loss" => Ok(Metric::TestLoss),
            "test_accuracy" => Ok(Metric::TestAccuracy),
            other => Err(Error::InvalidInput(format!(
                "unknown metric `{other}` (expected test_loss or test_accuracy)"
            ))),
        }
    }

    /// Whether smaller values of this metric are better.
    pub fn minimize(self) -> bool {
        matches!(self, Metric::TestLoss)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One metric recorded at epochs t_i = i·Δt for i = 1..m, Δt = t_max/m.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub metric: Metric,
    pub t_max: f64,
    pub values: Vec<f64>,
}

impl LearningCurve {
    pub fn new(metric: Metric, t_max: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("curve must have at least one epoch".into()));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidInput(format!("t_max must be positive, got {t_max}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite curve value at epoch {i}")));
        }
        Ok(LearningCurve { metric, t_max, values })
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn delta_t(&self) -> f64 {
        self.t_max / self.values.len() as f64
    }

    /// Epoch times t_1..t_m.
    pub fn times(&self) -> Vec<f64> {
        let dt = self.delta_t();
        (1..=self.values.len()).map(|i| i as f64 * dt).collect()
    }

    /// Range check tied to the metric: accuracies live in [0,1], losses are
    /// positive.  Enforced on persisted datasets, not at construction, so
    /// that degenerate analytical curves (e.g. the all-zero flow started at
    /// the minimum) can still be represented in memory.
    pub fn validate_range(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            let ok = match self.metric {
                Metric::TestAccuracy => (0.0..=1.0).contains(&v),
                Metric::TestLoss => v > 0.0,
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "{} value {v} at epoch {i} out of range",
                    self.metric
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub num_layers: usize,
    pub units_per_layer: Vec<usize>,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub graph: ArchitectureGraph,
    pub hyperparams: Hyperparams,
    pub curves: Vec<LearningCurve>,
}

impl Trial {
    pub fn curve(&self, metric: Metric) -> Option<&LearningCurve> {
        self.curves.iter().find(|c| c.metric == metric)
    }
}

/// Diagonal quadratic task whose loss under gradient flow has a closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientFlowTask {
    pub eigenvalues: Vec<f64>,
    pub theta0: Vec<f64>,
    pub noise_scale: f64,
}

impl GradientFlowTask {
    pub fn new(eigenvalues: Vec<f64>, theta0: Vec<f64>, noise_scale: f64) -> Result<Self> {
        if eigenvalues.len() != theta0.len() || eigenvalues.is_empty() {
            return Err(Error::InvalidInput(
                "eigenvalues and theta0 must have equal nonzero length".into(),
            ));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidInput("eigenvalues must be positive".into()));
        }
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::InvalidInput("noise_scale must be nonnegative".into()));
        }
        Ok(GradientFlowTask { eigenvalues, theta0, noise_scale })
    }

    /// L(t) = Σ_k ½ λ_k Θ_{0,k}² e^{−2 λ_k t}.
    pub fn loss_at(&self, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.theta0)
            .map(|(&l, &th)| 0.5 * l * th * th * (-2.0 * l * t).exp())
            .sum()
    }

    /// |∂L/∂Θ|² along the flow; equals −dL/dt at every t.
    pub fn grad_norm_sq_at(&self, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.theta0)
            .map(|(&l, &th)| {
                let g = l * th * (-l * t).exp();
                g * g
            })
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Hyperparameter sampling
// ---------------------------------------------------------------------------

/// Sampling ranges. Log-scaled fields draw exp(U[ln lo, ln hi]); integer
/// fields round after sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub batch_size: (f64, f64),
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub num_layers: (usize, usize),
    pub units: (f64, f64),
    pub dropout: (f64, f64),
}

impl Default for HyperRanges {
    fn default() -> Self {
        HyperRanges {
            batch_size: (16.0, 512.0),
            learning_rate: (1e-4, 1e-1),
            weight_decay: (1e-5, 0.1),
            num_layers: (1, 5),
            units: (16.0, 1024.0),
            dropout: (0.0, 1.0),
        }
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

pub fn sample_hyperparams(rng: &mut impl Rng, ranges: &HyperRanges) -> Hyperparams {
    let batch_size = log_uniform(rng, ranges.batch_size.0, ranges.batch_size.1).round() as usize;
    let learning_rate = log_uniform(rng, ranges.learning_rate.0, ranges.learning_rate.1);
    let weight_decay = rng.gen_range(ranges.weight_decay.0..ranges.weight_decay.1);
    let num_layers = rng.gen_range(ranges.num_layers.0..=ranges.num_layers.1);
    // Width is drawn independently for every hidden layer.
    let units_per_layer = (0..num_layers)
        .map(|_| log_uniform(rng, ranges.units.0, ranges.units.1).round() as usize)
        .collect();
    let dropout = rng.gen_range(ranges.dropout.0..ranges.dropout.1);
    Hyperparams {
        batch_size,
        learning_rate,
        weight_decay,
        num_layers,
        units_per_layer,
        dropout,
    }
}

/// Fully connected layered DAG over in_width → units... → out_width neurons.
/// Node ids are assigned layer by layer; every edge carries label 1.
pub fn hyperparams_to_graph(
    hp: &Hyperparams,
    in_width: usize,
    out_width: usize,
) -> Result<ArchitectureGraph> {
    if in_width == 0 || out_width == 0 {
        return Err(Error::InvalidInput("in/out widths must be positive".into()));
    }
    if hp.units_per_layer.is_empty() || hp.units_per_layer.iter().any(|&u| u == 0) {
        return Err(Error::InvalidInput("every hidden layer needs at least one unit".into()));
    }
    let mut widths = Vec::with_capacity(hp.units_per_layer.len() + 2);
    widths.push(in_width);
    widths.extend_from_slice(&hp.units_per_layer);
    widths.push(out_width);

    let num_nodes: usize = widths.iter().sum();
    let num_edges: usize = widths.windows(2).map(|w| w[0] * w[1]).sum();
    let mut edges = Vec::with_capacity(num_edges);
    let mut offset = 0usize;
    for w in widths.windows(2) {
        for s in 0..w[0] {
            for d in 0..w[1] {
                edges.push((offset + s, offset + w[0] + d, 1u8));
            }
        }
        offset += w[0];
    }
    ArchitectureGraph::new(GraphKind::Mlp, num_nodes, edges)
}

// ---------------------------------------------------------------------------
// Curve generation
// ---------------------------------------------------------------------------

/// Box–Muller standard normal draw.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Sample the task's loss on the epoch grid t_i = i·Δt, i = 1..m.  When the
/// task carries a noise scale, each point is jittered multiplicatively by
/// exp(noise_scale·ξ), ξ ~ N(0,1), which keeps losses positive.
pub fn gradient_flow_curve(
    task: &GradientFlowTask,
    m: usize,
    t_max: f64,
    rng: &mut impl Rng,
) -> Result<LearningCurve> {
    if m == 0 {
        return Err(Error::InvalidInput("curve length m must be positive".into()));
    }
    let dt = t_max / m as f64;
    let values = (1..=m)
        .map(|i| {
            let l = task.loss_at(i as f64 * dt);
            if task.noise_scale > 0.0 {
                l * (task.noise_scale * standard_normal(rng)).exp()
            } else {
                l
            }
        })
        .collect();
    LearningCurve::new(Metric::TestLoss, t_max, values)
}

/// Monotone map from loss to accuracy: a = a_max·(1 − e^{−κ/L}).  Strictly
/// decreasing in L, approaches a_max as the loss vanishes and 0 as it blows
/// up, so accuracy curves rise exactly where loss curves fall.
pub fn accuracy_from_loss(loss: &[f64], a_max: f64, kappa: f64) -> Vec<f64> {
    loss.iter()
        .map(|&l| {
            let a = a_max * (1.0 - (-kappa / l.max(1e-12)).exp());
            a.clamp(0.0, 1.0)
        })
        .collect()
}

/// Map from architecture to gradient-flow task rates.
///
/// The scalar statistic is the mean entry of the node-feature matrix;
/// because features are degree counts divided by the edge count, the mean
/// works out to exactly 1/num_nodes on any graph, so its inverse recovers
/// graph size.  Three modes combine:
///
/// * a fast transient, visible only in the first few epochs;
/// * a slow size-linked mode that carries most of the decay — bigger
///   (wider) architectures get larger rates and lose loss faster;
/// * a drift mode whose rate grows with network depth.  Over a short
///   observed prefix it is nearly constant, but by the end of the horizon
///   it separates shallow from deep networks.
///
/// The last two make the curve tail genuinely depend on the architecture:
/// a short prefix alone cannot pin the tail down (the drift mode has not
/// moved yet and the slow and drift rates are collinear over a few noisy
/// epochs), while the graph reveals both size and depth directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueLink {
    pub slow_base: f64,
    pub slow_scale: f64,
    pub fast_base: f64,
    pub fast_scale: f64,
    /// Drift rate for a single hidden layer.
    pub drift_base: f64,
    /// Drift rate increase per additional hidden layer.
    pub drift_per_layer: f64,
    /// Initial loss contribution (½ λ Θ₀²) of each mode.
    pub amp_slow: f64,
    pub amp_fast: f64,
    pub amp_drift: f64,
}

impl Default for EigenvalueLink {
    fn default() -> Self {
        EigenvalueLink {
            slow_base: 0.45,
            slow_scale: 0.0035,
            fast_base: 8.0,
            fast_scale: 0.02,
            drift_base: 0.10,
            drift_per_layer: 0.12,
            amp_slow: 0.9,
            amp_fast: 0.6,
            amp_drift: 0.25,
        }
    }
}

impl EigenvalueLink {
    pub fn task_for(
        &self,
        stat: f64,
        hidden_layers: usize,
        noise_scale: f64,
    ) -> Result<GradientFlowTask> {
        if !(stat > 0.0) || !stat.is_finite() {
            return Err(Error::InvalidInput(format!(
                "graph statistic must be positive, got {stat}"
            )));
        }
        if hidden_layers == 0 {
            return Err(Error::InvalidInput("need at least one hidden layer".into()));
        }
        let inv = 1.0 / stat;
        let lam_slow = self.slow_base + self.slow_scale * inv;
        let lam_fast = self.fast_base + self.fast_scale * inv;
        let lam_drift = self.drift_base + self.drift_per_layer * (hidden_layers - 1) as f64;
        // Θ₀ chosen so each mode contributes its configured share of L(0).
        let th = |amp: f64, lam: f64| (2.0 * amp / lam).sqrt();
        GradientFlowTask::new(
            vec![lam_slow, lam_fast, lam_drift],
            vec![
                th(self.amp_slow, lam_slow),
                th(self.amp_fast, lam_fast),
                th(self.amp_drift, lam_drift),
            ],
            noise_scale,
        )
    }
}

/// Mean entry of the node-feature matrix; the scalar the eigenvalue link
/// consumes.
pub fn graph_statistic(graph: &ArchitectureGraph) -> f64 {
    let nf = node_features(graph);
    let data = nf.x.data();
    data.iter().sum::<f64>() / data.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub num_trials: usize,
    pub m: usize,
    pub t_max: f64,
    pub noise: f64,
    pub seed: u64,
    pub in_width: usize,
    pub out_width: usize,
    pub ranges: HyperRanges,
    pub link: EigenvalueLink,
    pub a_max: f64,
    pub kappa: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            num_trials: 550,
            m: 200,
            t_max: 1.0,
            noise: 0.0,
            seed: 0,
            in_width: 1,
            out_width: 1,
            // Full-width nets serialize to very large edge lists; the default
            // caps hidden width at 128 to keep datasets desk-sized. Widen via
            // config when graph scale itself is under study.
            ranges: HyperRanges { units: (16.0, 128.0), ..HyperRanges::default() },
            link: EigenvalueLink::default(),
            a_max: 0.95,
            kappa: 0.5,
        }
    }
}

/// Generate the i-th trial of a dataset. Each trial draws from its own
/// counter-derived stream of the base seed, so generation order (and worker
/// assignment) cannot change the result.
pub fn generate_trial(config: &GenerateConfig, index: usize) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let hp = sample_hyperparams(&mut rng, &config.ranges);
    let graph = hyperparams_to_graph(&hp, config.in_width, config.out_width)?;
    let task = config.link.task_for(graph_statistic(&graph), hp.num_layers, config.noise)?;
    let loss = gradient_flow_curve(&task, config.m, config.t_max, &mut rng)?;
    let acc = LearningCurve::new(
        Metric::TestAccuracy,
        config.t_max,
        accuracy_from_loss(&loss.values, config.a_max, config.kappa),
    )?;
    loss.validate_range()?;
    acc.validate_range()?;
    // Curves are kept sorted by metric name so that a save/load cycle is an
    // exact identity.
    Ok(Trial {
        trial_id: format!("t{index:05}"),
        graph,
        hyperparams: hp,
        curves: vec![acc, loss],
    })
}

pub fn generate_synthetic_dataset(config: &GenerateConfig) -> Result<Vec<Trial>> {
    if config.num_trials < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 trials to allow a train/test split, got {}",
            config.num_trials
        )));
    }
    (0..config.num_trials).map(|i| generate_trial(config, i)).collect()
}

// ---------------------------------------------------------------------------
// Dataset files (JSON Lines, one trial per line)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ArchDto {
    kind: GraphKind,
    num_nodes: usize,
    edges: Vec<(usize, usize, u8)>,
}

#[derive(Serialize, Deserialize)]
struct CurveDto {
    m: usize,
    t_max: f64,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrialDto {
    trial_id: String,
    arch: ArchDto,
    hyperparams: Hyperparams,
    curves: BTreeMap<String, CurveDto>,
}

const TRIAL_KEYS: &[&str] = &["trial_id", "arch", "hyperparams", "curves"];
const ARCH_KEYS: &[&str] = &["kind", "num_nodes", "edges"];
const HYPER_KEYS: &[&str] = &[
    "batch_size",
    "learning_rate",
    "weight_decay",
    "num_layers",
    "units_per_layer",
    "dropout",
];
const CURVE_KEYS: &[&str] = &["m", "t_max", "values"];

pub fn save_dataset(path: &Path, trials: &[Trial]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for trial in trials {
        let mut curves = BTreeMap::new();
        for c in &trial.curves {
            curves.insert(
                c.metric.name().to_string(),
                CurveDto { m: c.m(), t_max: c.t_max, values: c.values.clone() },
            );
        }
        let dto = TrialDto {
            trial_id: trial.trial_id.clone(),
            arch: ArchDto {
                kind: trial.graph.kind(),
                num_nodes: trial.graph.num_nodes(),
                edges: trial.graph.edges().to_vec(),
            },
            hyperparams: trial.hyperparams.clone(),
            curves,
        };
        serde_json::to_writer(&mut out, &dto)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn collect_unknown_keys(
    value: &serde_json::Value,
    known: &[&str],
    what: &str,
    line: usize,
    warnings: &mut Vec<String>,
) {
    if let Some(obj) = value.as_object() {
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                warnings.push(format!("line {line}: unknown {what} key `{key}` ignored"));
            }
        }
    }
}

fn bad_line(line: usize, msg: impl Into<String>) -> Error {
    Error::DataFormat { line, msg: msg.into() }
}

/// Read a JSONL dataset. Returns the trials plus non-fatal warnings (unknown
/// keys, unrecognized curve names). Structural problems are errors carrying
/// the 1-based line number.
pub fn load_dataset(path: &Path) -> Result<(Vec<Trial>, Vec<String>)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut trials = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut expected_m: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| bad_line(line_no, format!("invalid JSON: {e}")))?;

        collect_unknown_keys(&value, TRIAL_KEYS, "trial", line_no, &mut warnings);
        collect_unknown_keys(&value["arch"], ARCH_KEYS, "arch", line_no, &mut warnings);
        collect_unknown_keys(&value["hyperparams"], HYPER_KEYS, "hyperparams", line_no, &mut warnings);

        let trial_id = value["trial_id"].as_str().unwrap_or("<missing trial_id>").to_string();
        for (required, present) in TRIAL_KEYS.iter().zip(
            TRIAL_KEYS.iter().map(|k| value.get(*k).is_some()),
        ) {
            if !present {
                return Err(bad_line(
                    line_no,
                    format!("trial {trial_id}: missing required key `{required}`"),
                ));
            }
        }
        if let Some(curves) = value["curves"].as_object() {
            for (name, curve) in curves {
                if Metric::parse(name).is_err() {
                    warnings.push(format!("line {line_no}: unknown curve `{name}` ignored"));
                } else {
                    collect_unknown_keys(curve, CURVE_KEYS, "curve", line_no, &mut warnings);
                }
            }
        }

        let dto: TrialDto = serde_json::from_value(value)
            .map_err(|e| bad_line(line_no, format!("trial {trial_id}: {e}")))?;

        let graph = ArchitectureGraph::new(dto.arch.kind, dto.arch.num_nodes, dto.arch.edges)
            .map_err(|e| bad_line(line_no, format!("trial {}: {e}", dto.trial_id)))?;
        if dto.hyperparams.num_layers != dto.hyperparams.units_per_layer.len() {
            return Err(bad_line(
                line_no,
                format!(
                    "trial {}: num_layers {} but {} units_per_layer entries",
                    dto.trial_id,
                    dto.hyperparams.num_layers,
                    dto.hyperparams.units_per_layer.len()
                ),
            ));
        }

        let mut curves = Vec::new();
        for (name, c) in &dto.curves {
            let Ok(metric) = Metric::parse(name) else { continue };
            if c.m != c.values.len() {
                return Err(bad_line(
                    line_no,
                    format!(
                        "trial {}: curve {} declares m={} but has {} values",
                        dto.trial_id,
                        name,
                        c.m,
                        c.values.len()
                    ),
                ));
            }
            let curve = LearningCurve::new(metric, c.t_max, c.values.clone())
                .and_then(|c| c.validate_range().map(|_| c))
                .map_err(|e| bad_line(line_no, format!("trial {}: {e}", dto.trial_id)))?;
            match expected_m {
                None => expected_m = Some(curve.m()),
                Some(m) if m != curve.m() => {
                    return Err(bad_line(
                        line_no,
                        format!(
                            "trial {}: curve length {} differs from {} used elsewhere in the file",
                            dto.trial_id,
                            curve.m(),
                            m
                        ),
                    ));
                }
                _ => {}
            }
            curves.push(curve);
        }
        if curves.is_empty() {
            return Err(bad_line(
                line_no,
                format!("trial {}: no recognized curves", dto.trial_id),
            ));
        }
        if !seen_ids.insert(dto.trial_id.clone()) {
            return Err(bad_line(line_no, format!("duplicate trial_id {}", dto.trial_id)));
        }
        trials.push(Trial {
            trial_id: dto.trial_id,
            graph,
            hyperparams: dto.hyperparams,
            curves,
        });
    }
    Ok((trials, warnings))
}

/// Split whole trials into train/test with a seeded shuffle.  Epochs are
/// never split; a trial is entirely on one side.
pub fn split(
    mut trials: Vec<Trial>,
    test_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<Trial>, Vec<Trial>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let n = trials.len();
    let num_test = (n as f64 * test_fraction).round() as usize;
    if n == 0 || n - num_test == 0 {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} trials into {num_test} test + rest train"
        )));
    }
    // Fisher–Yates over indices, then stable pick, so the result depends only
    // on the rng stream and the input order.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let test_idx: std::collections::HashSet<usize> = order[..num_test].iter().copied().collect();
    let mut train = Vec::with_capacity(n - num_test);
    let mut test = Vec::with_capacity(num_test);
    for (i, trial) in trials.drain(..).enumerate() {
        if test_idx.contains(&i) {
            test.push(trial);
        } else {
            train.push(trial);
        }
    }
    Ok((train, test))
}
