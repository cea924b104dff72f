//! Prefix encoder: GRU over the observed (value, time) pairs, producing
//! the Gaussian posterior over the initial latent state.

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Floor added to the softplus sigma head so the posterior never
/// degenerates.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Observed prefix of a learning curve on the uniform epoch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedPrefix {
    pub values: Vec<f64>,
    pub times: Vec<f64>,
}

impl ObservedPrefix {
    pub fn new(values: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        if values.len() != times.len() {
            return Err(Error::InvalidInput(format!(
                "prefix length mismatch: {} values vs {} times",
                values.len(),
                times.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prefix contains non-finite value".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("prefix times must strictly increase".into()));
        }
        Ok(ObservedPrefix { values, times })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Posterior parameters for the latent state at the first predicted
/// epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SeqEncoderParams {
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_u: ParamId,
    pub u_u: ParamId,
    pub b_u: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub w_mu: ParamId,
    pub b_mu: ParamId,
    pub w_sigma: ParamId,
    pub b_sigma: ParamId,
    pub hidden: usize,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

impl SeqEncoderParams {
    /// Register GRU, projection, and head weights. Hidden width equals
    /// the latent dimension; the (y, t) pair is linearly projected to
    /// the same width before entering the gates.
    pub fn init(store: &mut ParamStore, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let d = latent_dim;
        let zeros = |n: usize| Tensor::vector(vec![0.0; n]);
        SeqEncoderParams {
            w_in: store.add("seq.w_in", xavier(rng, d, 2)),
            b_in: store.add("seq.b_in", zeros(d)),
            w_u: store.add("seq.w_u", xavier(rng, d, d)),
            u_u: store.add("seq.u_u", xavier(rng, d, d)),
            b_u: store.add("seq.b_u", zeros(d)),
            w_r: store.add("seq.w_r", xavier(rng, d, d)),
            u_r: store.add("seq.u_r", xavier(rng, d, d)),
            b_r: store.add("seq.b_r", zeros(d)),
            w_h: store.add("seq.w_h", xavier(rng, d, d)),
            u_h: store.add("seq.u_h", xavier(rng, d, d)),
            b_h: store.add("seq.b_h", zeros(d)),
            w_mu: store.add("seq.w_mu", xavier(rng, d, d)),
            b_mu: store.add("seq.b_mu", zeros(d)),
            w_sigma: store.add("seq.w_sigma", xavier(rng, d, d)),
            b_sigma: store.add("seq.b_sigma", zeros(d)),
            hidden: d,
        }
    }
}

/// Tape leaves for one encoder pass; registering once keeps the tape
/// compact when the cell runs many steps.
pub(crate) struct SeqNodes {
    w_in: NodeId,
    b_in: NodeId,
    w_u: NodeId,
    u_u: NodeId,
    b_u: NodeId,
    w_r: NodeId,
    u_r: NodeId,
    b_r: NodeId,
    w_h: NodeId,
    u_h: NodeId,
    b_h: NodeId,
    w_mu: NodeId,
    b_mu: NodeId,
    w_sigma: NodeId,
    b_sigma: NodeId,
    hidden: usize,
}

impl SeqNodes {
    pub(crate) fn register(tape: &mut Tape, store: &ParamStore, p: &SeqEncoderParams) -> Self {
        SeqNodes {
            w_in: tape.param(store, p.w_in),
            b_in: tape.param(store, p.b_in),
            w_u: tape.param(store, p.w_u),
            u_u: tape.param(store, p.u_u),
            b_u: tape.param(store, p.b_u),
            w_r: tape.param(store, p.w_r),
            u_r: tape.param(store, p.u_r),
            b_r: tape.param(store, p.b_r),
            w_h: tape.param(store, p.w_h),
            u_h: tape.param(store, p.u_h),
            b_h: tape.param(store, p.b_h),
            w_mu: tape.param(store, p.w_mu),
            b_mu: tape.param(store, p.b_mu),
            w_sigma: tape.param(store, p.w_sigma),
            b_sigma: tape.param(store, p.b_sigma),
            hidden: p.hidden,
        }
    }

    /// Standard GRU update:
    ///   u = sigmoid(W_u x + U_u h + b_u)
    ///   r = sigmoid(W_r x + U_r h + b_r)
    ///   h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)
    ///   h' = (1 − u) ⊙ h + u ⊙ h̃
    pub(crate) fn gru_step(&self, tape: &mut Tape, h: NodeId, x: NodeId) -> Result<NodeId> {
        let gate = |tape: &mut Tape, w: NodeId, u: NodeId, b: NodeId, hin: NodeId| -> Result<NodeId> {
            let wx = tape.matmul(w, x)?;
            let uh = tape.matmul(u, hin)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, b)
        };
        let zu = gate(tape, self.w_u, self.u_u, self.b_u, h)?;
        let u = tape.sigmoid(zu);
        let zr = gate(tape, self.w_r, self.u_r, self.b_r, h)?;
        let r = tape.sigmoid(zr);
        let rh = tape.mul(r, h)?;
        let zh = gate(tape, self.w_h, self.u_h, self.b_h, rh)?;
        let cand = tape.tanh(zh);
        let uh_old = tape.mul(u, h)?;
        let keep = tape.sub(h, uh_old)?;
        let take = tape.mul(u, cand)?;
        tape.add(keep, take)
    }

    /// Unroll the GRU forward over the prefix from h_0 = 0 and map the
    /// final hidden state to (mu, sigma).
    pub(crate) fn encode(
        &self,
        tape: &mut Tape,
        prefix: &ObservedPrefix,
    ) -> Result<(NodeId, NodeId)> {
        if prefix.is_empty() {
            return Err(Error::InvalidInput("cannot encode an empty prefix".into()));
        }
        let mut h = tape.constant(Tensor::vector(vec![0.0; self.hidden]));
        for (&y, &t) in prefix.values.iter().zip(&prefix.times) {
            let pair = tape.constant(Tensor::vector(vec![y, t]));
            let proj = tape.matmul(self.w_in, pair)?;
            let x = tape.add(proj, self.b_in)?;
            h = self.gru_step(tape, h, x)?;
        }
        let mu_lin = tape.matmul(self.w_mu, h)?;
        let mu = tape.add(mu_lin, self.b_mu)?;
        let sig_lin = tape.matmul(self.w_sigma, h)?;
        let pre = tape.add(sig_lin, self.b_sigma)?;
        let sp = tape.softplus(pre);
        let sigma = tape.add_const(sp, SIGMA_FLOOR);
        Ok((mu, sigma))
    }
}

/// Reparameterized sample z = mu + sigma ⊙ noise on the tape.
pub(crate) fn sample_on_tape(
    tape: &mut Tape,
    mu: NodeId,
    sigma: NodeId,
    noise: &[f64],
) -> Result<NodeId> {
    let eps = tape.constant(Tensor::vector(noise.to_vec()));
    let scaled = tape.mul(sigma, eps)?;
    tape.add(mu, scaled)
}

/// One GRU step as plain values.
pub fn gru_cell(
    h: &[f64],
    x: &[f64],
    params: &SeqEncoderParams,
    store: &ParamStore,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let nodes = SeqNodes::register(&mut tape, store, params);
    let hn = tape.constant(Tensor::vector(h.to_vec()));
    let xn = tape.constant(Tensor::vector(x.to_vec()));
    let out = nodes.gru_step(&mut tape, hn, xn)?;
    Ok(tape.value(out).data().to_vec())
}

/// Posterior parameters as plain values.
pub fn encode_observations(
    prefix: &ObservedPrefix,
    params: &SeqEncoderParams,
    store: &ParamStore,
) -> Result<PosteriorStats> {
    let mut tape = Tape::new();
    let nodes = SeqNodes::register(&mut tape, store, params);
    let (mu, sigma) = nodes.encode(&mut tape, prefix)?;
    Ok(PosteriorStats {
        mu: tape.value(mu).data().to_vec(),
        sigma: tape.value(sigma).data().to_vec(),
    })
}

/// Reparameterized sample as plain values.
pub fn sample_latent(stats: &PosteriorStats, noise: &[f64]) -> Vec<f64> {
    stats
        .mu
        .iter()
        .zip(&stats.sigma)
        .zip(noise)
        .map(|((&m, &s), &e)| m + s * e)
        .collect()
}
