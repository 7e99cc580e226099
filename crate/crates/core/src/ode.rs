//! Adaptive Dormand-Prince 5(4) integrator for small real systems.

pub struct Dopri<const N: usize> {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

impl<const N: usize> Dopri<N> {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Dopri {
            rtol,
            atol,
            h_min: 1e-14,
            h_max: 0.05,
        }
    }

    /// Integrate `y' = f(t, y)` from `t0` until `t_end` or until `observe`
    /// returns `Stop`. Returns the final `(t, y)`.
    pub fn integrate(
        &self,
        f: impl Fn(f64, &[f64; N]) -> [f64; N],
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        mut observe: impl FnMut(f64, &[f64; N]) -> Control,
    ) -> (f64, [f64; N]) {
        let mut t = t0;
        let mut y = y0;
        let mut h = (self.h_max * 0.1).min(t_end - t0);
        let mut k = [[0.0; N]; 7];
        k[0] = f(t, &y);
        while t < t_end {
            if t + h > t_end {
                h = t_end - t;
            }
            for s in 1..7 {
                let mut ys = y;
                for (i, v) in ys.iter_mut().enumerate() {
                    for j in 0..s {
                        *v += h * A[s][j] * k[j][i];
                    }
                }
                k[s] = f(t + C[s] * h, &ys);
            }
            let mut y5 = y;
            let mut err = 0.0f64;
            for i in 0..N {
                let mut d5 = 0.0;
                let mut d4 = 0.0;
                for s in 0..7 {
                    d5 += B5[s] * k[s][i];
                    d4 += B4[s] * k[s][i];
                }
                y5[i] += h * d5;
                let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
                err = err.max((h * (d5 - d4) / sc).abs());
            }
            if err <= 1.0 || h <= self.h_min {
                t += h;
                y = y5;
                k[0] = k[6];
                if observe(t, &y) == Control::Stop {
                    break;
                }
            }
            let fac = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
            h = (h * fac.clamp(0.2, 5.0)).clamp(self.h_min, self.h_max);
        }
        (t, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let dp = Dopri::<2>::new(1e-12, 1e-14);
        let (t, y) = dp.integrate(|_, y| [y[1], -y[0]], 0.0, [1.0, 0.0], 10.0, |_, _| Control::Continue);
        assert!((t - 10.0).abs() < 1e-14);
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn stop_on_event() {
        let dp = Dopri::<1>::new(1e-10, 1e-12);
        let (t, _) = dp.integrate(|_, _| [1.0], 0.0, [0.0], 5.0, |_, y| {
            if y[0] > 1.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        });
        assert!(t > 1.0 && t < 1.1);
    }
}
