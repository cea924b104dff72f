//! Squashing normalization for learning-curve values.
//!
//! Curves are mapped into [0, 1] through a scaled logistic whose constants are
//! chosen so that the hard bounds land exactly on 0 and 1, while the soft
//! bounds control where the transition is steep.  For metrics that are
//! minimized (loss) the output is flipped so that 1 always means "better".

use crate::error::{Error, Result};

/// Parameters of the bijection (l_hard, u_hard) → (0, 1).
///
/// `a`, `b`, `c`, `d` are derived at construction:
///   a = 2 / (u_soft − l_soft)
///   b = −(u_soft + l_soft) / (u_soft − l_soft)
///   c = (1 + E_u + E_l + E_u·E_l) / (E_l − E_u),  E_x = e^{−a(x_hard − b)}
///   d = −c / (1 + e^{−a(l_hard − b)})
/// which force g(l_hard) = 0 and g(u_hard) = 1 before the minimize flip.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub minimize: bool,
    pub l_hard: f64,
    pub u_hard: f64,
    pub l_soft: f64,
    pub u_soft: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl NormalizationParams {
    pub fn new(minimize: bool, l_hard: f64, u_hard: f64, l_soft: f64, u_soft: f64) -> Result<Self> {
        for (name, v) in [
            ("l_hard", l_hard),
            ("u_hard", u_hard),
            ("l_soft", l_soft),
            ("u_soft", u_soft),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "normalization bound {name} must be finite, got {v}"
                )));
            }
        }
        if l_hard >= u_hard {
            return Err(Error::InvalidInput(format!(
                "hard bounds must satisfy l_hard < u_hard, got [{l_hard}, {u_hard}]"
            )));
        }
        if l_soft >= u_soft {
            return Err(Error::InvalidInput(format!(
                "soft bounds must satisfy l_soft < u_soft, got [{l_soft}, {u_soft}]"
            )));
        }
        let a = 2.0 / (u_soft - l_soft);
        let b = -(u_soft + l_soft) / (u_soft - l_soft);
        let e_u = (-a * (u_hard - b)).exp();
        let e_l = (-a * (l_hard - b)).exp();
        let c = (1.0 + e_u + e_l + e_u * e_l) / (e_l - e_u);
        let d = -c / (1.0 + e_l);
        Ok(Self { minimize, l_hard, u_hard, l_soft, u_soft, a, b, c, d })
    }

    /// Accuracy-style parameters: values already live in [0, 1], higher is better.
    pub fn accuracy() -> Self {
        Self::new(false, 0.0, 1.0, 0.0, 1.0).expect("fixed bounds are valid")
    }

    /// Loss-style parameters over log-loss values: hard range (0, ln 10),
    /// soft upper bound at the largest first-epoch value seen in the data.
    pub fn log_loss(max_first_epoch: f64) -> Result<Self> {
        Self::new(true, 0.0, 10f64.ln(), 0.0, max_first_epoch)
    }

    /// Map one raw value into [0, 1].  Values outside the closed hard range
    /// are rejected; `index` only labels the error message.
    pub fn apply(&self, x: f64, index: usize) -> Result<f64> {
        if !(x >= self.l_hard && x <= self.u_hard) {
            return Err(Error::NormalizationDomain {
                index,
                value: x,
                bounds: format!("[{}, {}]", self.l_hard, self.u_hard),
            });
        }
        let s = 1.0 / (1.0 + (-self.a * (x - self.b)).exp());
        let y = self.c * s + self.d;
        Ok(self.flip(y))
    }

    /// Inverse map; defined only on the open interval (0, 1).
    pub fn invert(&self, y: f64, index: usize) -> Result<f64> {
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::NormalizationDomain {
                index,
                value: y,
                bounds: "(0, 1)".to_string(),
            });
        }
        let y = self.flip(y);
        Ok(self.b - (self.c / (y - self.d) - 1.0).ln() / self.a)
    }

    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        values.iter().enumerate().map(|(i, &x)| self.apply(x, i)).collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        values.iter().enumerate().map(|(i, &y)| self.invert(y, i)).collect()
    }

    // Orientation flip: metrics that are minimized map low raw values to
    // outputs near 1.  Involution, so it serves both directions.
    fn flip(&self, y: f64) -> f64 {
        if self.minimize { 1.0 - y } else { y }
    }
}
