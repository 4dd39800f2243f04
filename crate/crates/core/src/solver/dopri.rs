//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RkError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step together with its continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    /// Derivative at `t0` and `t0 + h`.
    pub f0: [f64; N],
    pub f1: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Continuous extension, valid for `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let r = &self.rcont;
        std::array::from_fn(|i| r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i]))))
    }
}

pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, h_init: 1e-3, h_max: 0.5, max_steps: 200_000 }
    }

    /// Integrates from `t0` towards `t_end` (`t_end > t0`), handing every
    /// accepted step to `on_step`. Returns the number of accepted steps.
    /// Integration ends early when `on_step` returns [`Control::Stop`].
    pub fn integrate<const N: usize, F, S>(
        &self,
        rhs: F,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        mut on_step: S,
    ) -> Result<usize, RkError>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        S: FnMut(&DenseStep<N>) -> Control,
    {
        let comb = |y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]| -> [f64; N] {
            std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
        };

        let mut t = t0;
        let mut y = y0;
        let mut k1 = rhs(t, &y);
        let mut h = self.h_init.min(self.h_max).min(t_end - t0);
        let mut accepted = 0;
        let mut last_rejected = false;

        while t < t_end {
            if accepted >= self.max_steps {
                return Err(RkError::TooManySteps { t, max_steps: self.max_steps });
            }
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(RkError::StepUnderflow { t, h });
            }
            if t + h > t_end {
                h = t_end - t;
            }

            let k2 = rhs(t + C2 * h, &comb(&y, h, &[(A21, &k1)]));
            let k3 = rhs(t + C3 * h, &comb(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = rhs(t + C4 * h, &comb(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = rhs(t + C5 * h, &comb(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
            let k6 = rhs(t + h, &comb(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
            let y_new = comb(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let k7 = rhs(t + h, &y_new);

            if y_new.iter().chain(k7.iter()).any(|v| !v.is_finite()) {
                // treat as a failed step; shrink hard
                h *= 0.1;
                last_rejected = true;
                continue;
            }

            let mut err = 0.0;
            for i in 0..N {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / N as f64).sqrt();

            if err <= 1.0 {
                let mut rcont = [[0.0; N]; 5];
                for i in 0..N {
                    let dy = y_new[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    rcont[0][i] = y[i];
                    rcont[1][i] = dy;
                    rcont[2][i] = bspl;
                    rcont[3][i] = dy - h * k7[i] - bspl;
                    rcont[4][i] =
                        h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let step = DenseStep { t0: t, h, y0: y, y1: y_new, f0: k1, f1: k7, rcont };
                accepted += 1;
                t += h;
                y = y_new;
                k1 = k7;
                if let Control::Stop = on_step(&step) {
                    return Ok(accepted);
                }
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 5.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h = (h * fac).min(self.h_max);
                last_rejected = false;
            } else {
                let fac = (0.9 * err.powf(-0.2)).max(0.2);
                h *= fac;
                last_rejected = true;
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(RkError::NonFinite { t });
            }
        }
        Ok(accepted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let rk = Dopri5::new(1e-10, 1e-12);
        let mut last = [1.0];
        let mut t_last = 0.0;
        rk.integrate(
            |_, y: &[f64; 1]| [-y[0]],
            0.0,
            [1.0],
            3.0,
            |s| {
                last = s.y1;
                t_last = s.t1();
                Control::Continue
            },
        )
        .unwrap();
        assert!((t_last - 3.0).abs() < 1e-14);
        assert!((last[0] - (-3.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn dense_output_tracks_harmonic_oscillator() {
        let rk = Dopri5::new(1e-10, 1e-12);
        let mut worst: f64 = 0.0;
        rk.integrate(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [0.0, 1.0],
            6.0,
            |s| {
                for j in 0..=10 {
                    let t = s.t0 + s.h * j as f64 / 10.0;
                    let y = s.eval(t);
                    worst = worst.max((y[0] - t.sin()).abs()).max((y[1] - t.cos()).abs());
                }
                Control::Continue
            },
        )
        .unwrap();
        assert!(worst < 1e-8, "dense error {worst}");
    }

    #[test]
    fn dense_output_hits_step_endpoints() {
        let rk = Dopri5::new(1e-8, 1e-10);
        rk.integrate(
            |t, y: &[f64; 1]| [t * y[0].cos()],
            0.0,
            [0.3],
            2.0,
            |s| {
                let a = s.eval(s.t0);
                let b = s.eval(s.t1());
                assert!((a[0] - s.y0[0]).abs() < 1e-15);
                assert!((b[0] - s.y1[0]).abs() < 1e-14);
                Control::Continue
            },
        )
        .unwrap();
    }

    #[test]
    fn stop_ends_integration() {
        let rk = Dopri5::new(1e-8, 1e-10);
        let n = rk
            .integrate(
                |_, _: &[f64; 1]| [1.0],
                0.0,
                [0.0],
                100.0,
                |s| {
                    if s.t1() > 1.0 {
                        Control::Stop
                    } else {
                        Control::Continue
                    }
                },
            )
            .unwrap();
        assert!(n > 0 && n < 100);
    }
}
