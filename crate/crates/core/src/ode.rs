//! Dormand–Prince 5(4) integrator with embedded error control.
//!
//! Only what the exact Hamiltonian flow needs: a fixed-dimension first-order
//! system, mixed absolute/relative tolerance, and exact landing on requested
//! output times.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            atol: 1e-12,
            rtol: 1e-12,
            max_steps: 200_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights equal the last row of A (FSAL); E = b5 - b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` and returns the state at each of the
/// increasing `times` (all `> t0`).
pub fn dopri5_at<F>(mut f: F, t0: f64, y0: &[f64], times: &[f64], opts: OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(t, &y, &mut k[0]);

    let t_end = match times.last() {
        Some(&te) => te,
        None => return Ok(out),
    };
    let span = t_end - t0;
    if !(span > 0.0) || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= t0 {
        return Err(Error::InvalidParameter("output times must increase from t0".into()));
    }
    let mut h = initial_step(&y, &k[0], span, opts);
    let mut steps = 0usize;
    let mut err_prev = 1e-4_f64;

    for &target in times {
        while t < target {
            if steps >= opts.max_steps {
                return Err(Error::ExactFlow(format!(
                    "step budget {} exhausted at t = {t}",
                    opts.max_steps
                )));
            }
            let remaining = target - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let hs = if landing { remaining } else { h };

            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += hs * A[s][j] * kj[i];
                    }
                    ytmp[i] = acc;
                }
                f(t + C[s] * hs, &ytmp, &mut k[s]);
            }
            // Stage 7 was evaluated at the fifth-order solution, which is ytmp.
            ynew.copy_from_slice(&ytmp);

            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for (s, ks) in k.iter().enumerate() {
                    e += E[s] * ks[i];
                }
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                err += (hs * e / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::ExactFlow(format!("non-finite state at t = {t}")));
            }
            steps += 1;

            if err <= 1.0 {
                t = if landing { target } else { t + hs };
                y.copy_from_slice(&ynew);
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                // PI step-size control.
                let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
                err_prev = err.max(1e-4);
                let grown = hs * fac.clamp(0.2, 10.0);
                h = if landing { h.max(grown) } else { grown };
            } else {
                h = hs * (0.9 * err.powf(-0.2)).max(0.2);
            }
            if h < 1e-14 * span {
                return Err(Error::ExactFlow(format!("step size underflow at t = {t}")));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &[f64], dy: &[f64], span: f64, opts: OdeOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (dy[i] / sc).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * (d0 / d1).sqrt()
    };
    h.min(span).max(1e-10 * span)
}
