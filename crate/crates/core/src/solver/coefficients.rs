//! Coefficients of the cubic-in-slope ODE `g'' = a + b g' + c g'^2 + d g'^3`.

use crate::params::MarketParams;

/// The four coefficient values at one point `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Coefficients {
    /// Evaluates the coefficients from bare scalars. `gamma = 0` is allowed
    /// here so the log-utility reduction can be checked.
    pub fn from_scalars(z: f64, mu: f64, sigma: f64, delta: f64, gamma: f64) -> Self {
        let var = sigma * sigma;
        let m = 2.0 * mu / var;
        let r = 2.0 * delta / var;
        let q = 1.0 / (1.0 - gamma);
        let ez = z.exp();
        let l = logistic(z);
        let a = -m + 2.0 * (1.0 - gamma) * l;
        let b =
            -q * r * (1.0 + ez) + gamma * q * m * ez + 2.0 * m - 1.0 + (5.0 * gamma - 2.0) * l - gamma * ez;
        let c = 2.0 * q * r * (1.0 + ez) - 2.0 * gamma * q * m * ez - m
            + 1.0
            + gamma * (4.0 * gamma - 3.0) * q * l
            + 2.0 * gamma * ez;
        let d = -q * r * (1.0 + ez) + gamma * q * m * ez - gamma * gamma * q * l - gamma * ez;
        Self { a, b, c, d }
    }

    pub fn at(z: f64, params: &MarketParams) -> Self {
        Self::from_scalars(z, params.mu(), params.sigma(), params.delta(), params.gamma())
    }

    /// Right-hand side `g''` for slope `gp`.
    #[inline]
    pub fn second_derivative(&self, gp: f64) -> f64 {
        self.a + gp * (self.b + gp * (self.c + gp * self.d))
    }

    /// Smallest `m >= 0` with `|d| m^3 >= |a| + |b| m + |c| m^2`, i.e. the
    /// slope magnitude beyond which the cubic term dictates the sign of `g''`.
    pub fn cubic_dominance_bound(&self) -> f64 {
        let (a, b, c, d) = (self.a.abs(), self.b.abs(), self.c.abs(), self.d.abs());
        if d == 0.0 {
            return f64::INFINITY;
        }
        let p = |m: f64| ((d * m - c) * m - b) * m - a;
        // Cauchy bound on the unique positive root
        let mut hi = 1.0 + a.max(b).max(c) / d;
        let mut lo = 0.0;
        if p(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        hi
    }
}

/// Unique zero of `a(z)`: `log(mu / ((1-gamma) sigma^2 - mu))`.
pub fn find_z0(params: &MarketParams) -> f64 {
    let cap = (1.0 - params.gamma()) * params.sigma() * params.sigma();
    (params.mu() / (cap - params.mu())).ln()
}

/// Slope barrier `M'` used as a runtime assertion during integration: the
/// largest cubic-dominance bound over `[z0 - half_width, z0 + half_width]`,
/// doubled.
pub fn gprime_bound(params: &MarketParams, half_width: f64) -> f64 {
    let z0 = find_z0(params);
    let n = 4000;
    let worst = (0..=n)
        .map(|i| z0 - half_width + 2.0 * half_width * i as f64 / n as f64)
        .map(|z| Coefficients::at(z, params).cubic_dominance_bound())
        .fold(0.0_f64, f64::max);
    2.0 * worst
}
