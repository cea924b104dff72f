//! Autonomous latent dynamics ż = f([z ‖ z_G]), fixed-step RK4
//! integration, and the per-state decoder.
//!
//! Integration is discretize-then-optimize: the tape path unrolls every
//! solver stage, so backprop yields exact gradients of the discrete
//! scheme. Generic (closure-based) versions of the same formulas exist
//! for plain numeric use and as the convergence-test surface.

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

// ── generic fixed-step solver ───────────────────────────────────────

/// One classical RK4 step of `f` from `z` with step `h`.
pub fn rk4_step<F>(f: &F, z: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if h <= 0.0 {
        return Err(Error::InvalidInput(format!("rk4 step h = {h} must be positive")));
    }
    let d = z.len();
    let k1 = f(z);
    let zk = |k: &[f64], scale: f64| -> Vec<f64> {
        (0..d).map(|i| z[i] + scale * k[i]).collect()
    };
    let k2 = f(&zk(&k1, h / 2.0));
    let k3 = f(&zk(&k2, h / 2.0));
    let k4 = f(&zk(&k3, h));
    Ok((0..d)
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate an autonomous field through `times`, returning one state
/// per entry; `times[0]` is the initial condition's time. `substeps`
/// RK4 steps are taken per gap (1 = step size equals the gap).
pub fn integrate<F>(f: &F, z0: &[f64], times: &[f64], substeps: usize) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if times.is_empty() {
        return Err(Error::InvalidInput("integrate needs at least one time".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("times must strictly increase".into()));
    }
    let sub = substeps.max(1);
    let mut traj = Vec::with_capacity(times.len());
    traj.push(z0.to_vec());
    let mut z = z0.to_vec();
    let mut step_index = 0usize;
    for gap in times.windows(2) {
        let h = (gap[1] - gap[0]) / sub as f64;
        for _ in 0..sub {
            z = rk4_step(f, &z, h)?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged { step: step_index });
            }
            step_index += 1;
        }
        traj.push(z.clone());
    }
    Ok(traj)
}

// ── trainable parameters ────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct OdeFuncParams {
    /// Hidden layer (D x 2D) and bias.
    pub w1: ParamId,
    pub b1: ParamId,
    /// Output layer (D x D) and bias.
    pub w2: ParamId,
    pub b2: ParamId,
    pub latent_dim: usize,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    /// Optional hidden layer (width x D plus bias); None = linear head.
    pub hidden: Option<(ParamId, ParamId)>,
    /// Output row (1 x width) and scalar bias.
    pub w_out: ParamId,
    pub b_out: ParamId,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

impl OdeFuncParams {
    /// Two-layer field: tanh hidden (width D), linear output. The
    /// output layer starts at zero so the initial field is zero and
    /// early training is stable.
    pub fn init(store: &mut ParamStore, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let d = latent_dim;
        OdeFuncParams {
            w1: store.add("ode.w1", xavier(rng, d, 2 * d)),
            b1: store.add("ode.b1", Tensor::vector(vec![0.0; d])),
            w2: store.add("ode.w2", Tensor::matrix(d, d, vec![0.0; d * d])),
            b2: store.add("ode.b2", Tensor::vector(vec![0.0; d])),
            latent_dim: d,
        }
    }
}

impl DecoderParams {
    pub fn init_linear(store: &mut ParamStore, latent_dim: usize, rng: &mut impl Rng) -> Self {
        DecoderParams {
            hidden: None,
            w_out: store.add("dec.w_out", xavier(rng, 1, latent_dim)),
            b_out: store.add("dec.b_out", Tensor::scalar(0.0)),
        }
    }

    pub fn init_mlp(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        DecoderParams {
            hidden: Some((
                store.add("dec.w_h", xavier(rng, hidden_width, latent_dim)),
                store.add("dec.b_h", Tensor::vector(vec![0.0; hidden_width])),
            )),
            w_out: store.add("dec.w_out", xavier(rng, 1, hidden_width)),
            b_out: store.add("dec.b_out", Tensor::scalar(0.0)),
        }
    }
}

// ── tape path ───────────────────────────────────────────────────────

pub(crate) struct OdeNodes {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

impl OdeNodes {
    pub(crate) fn register(tape: &mut Tape, store: &ParamStore, p: &OdeFuncParams) -> Self {
        OdeNodes {
            w1: tape.param(store, p.w1),
            b1: tape.param(store, p.b1),
            w2: tape.param(store, p.w2),
            b2: tape.param(store, p.b2),
        }
    }

    /// dz = W2 · tanh(W1 · [z ‖ z_G] + b1) + b2. Autonomous: time never
    /// enters.
    pub(crate) fn field(&self, tape: &mut Tape, z: NodeId, zg: NodeId) -> Result<NodeId> {
        let joint = tape.concat(z, zg)?;
        let a1 = tape.matmul(self.w1, joint)?;
        let a1b = tape.add(a1, self.b1)?;
        let hidden = tape.tanh(a1b);
        let a2 = tape.matmul(self.w2, hidden)?;
        tape.add(a2, self.b2)
    }

    pub(crate) fn rk4_step(
        &self,
        tape: &mut Tape,
        z: NodeId,
        zg: NodeId,
        h: f64,
    ) -> Result<NodeId> {
        let k1 = self.field(tape, z, zg)?;
        let z2 = {
            let s = tape.scale(k1, h / 2.0);
            tape.add(z, s)?
        };
        let k2 = self.field(tape, z2, zg)?;
        let z3 = {
            let s = tape.scale(k2, h / 2.0);
            tape.add(z, s)?
        };
        let k3 = self.field(tape, z3, zg)?;
        let z4 = {
            let s = tape.scale(k3, h);
            tape.add(z, s)?
        };
        let k4 = self.field(tape, z4, zg)?;
        let k2x2 = tape.scale(k2, 2.0);
        let k3x2 = tape.scale(k3, 2.0);
        let s12 = tape.add(k1, k2x2)?;
        let s123 = tape.add(s12, k3x2)?;
        let s = tape.add(s123, k4)?;
        let inc = tape.scale(s, h / 6.0);
        tape.add(z, inc)
    }

    /// Unrolled fixed-step integration on the tape; returns one node per
    /// entry of `times` (the first is `z0` itself).
    pub(crate) fn integrate(
        &self,
        tape: &mut Tape,
        z0: NodeId,
        zg: NodeId,
        times: &[f64],
        substeps: usize,
    ) -> Result<Vec<NodeId>> {
        if times.is_empty() {
            return Err(Error::InvalidInput("integrate needs at least one time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("times must strictly increase".into()));
        }
        let sub = substeps.max(1);
        let mut traj = Vec::with_capacity(times.len());
        traj.push(z0);
        let mut z = z0;
        let mut step_index = 0usize;
        for gap in times.windows(2) {
            let h = (gap[1] - gap[0]) / sub as f64;
            for _ in 0..sub {
                z = self.rk4_step(tape, z, zg, h)?;
                if !tape.value(z).is_finite() {
                    return Err(Error::IntegrationDiverged { step: step_index });
                }
                step_index += 1;
            }
            traj.push(z);
        }
        Ok(traj)
    }
}

pub(crate) struct DecNodes {
    hidden: Option<(NodeId, NodeId)>,
    w_out: NodeId,
    b_out: NodeId,
}

impl DecNodes {
    pub(crate) fn register(tape: &mut Tape, store: &ParamStore, p: &DecoderParams) -> Self {
        DecNodes {
            hidden: p
                .hidden
                .map(|(w, b)| (tape.param(store, w), tape.param(store, b))),
            w_out: tape.param(store, p.w_out),
            b_out: tape.param(store, p.b_out),
        }
    }

    /// Scalar readout of one latent state (one-element node).
    pub(crate) fn decode(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let feat = match self.hidden {
            Some((w, b)) => {
                let a = tape.matmul(w, z)?;
                let ab = tape.add(a, b)?;
                tape.tanh(ab)
            }
            None => z,
        };
        let out = tape.matmul(self.w_out, feat)?;
        tape.add(out, self.b_out)
    }
}

// ── plain-value wrappers ────────────────────────────────────────────

/// Field value as plain numbers.
pub fn ode_func(
    z: &[f64],
    zg: &[f64],
    params: &OdeFuncParams,
    store: &ParamStore,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let nodes = OdeNodes::register(&mut tape, store, params);
    let zn = tape.constant(Tensor::vector(z.to_vec()));
    let zgn = tape.constant(Tensor::vector(zg.to_vec()));
    let dz = nodes.field(&mut tape, zn, zgn)?;
    Ok(tape.value(dz).data().to_vec())
}

/// Decoded scalar as a plain number.
pub fn decode(z: &[f64], params: &DecoderParams, store: &ParamStore) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = DecNodes::register(&mut tape, store, params);
    let zn = tape.constant(Tensor::vector(z.to_vec()));
    let y = nodes.decode(&mut tape, zn)?;
    Ok(tape.value(y).item())
}
