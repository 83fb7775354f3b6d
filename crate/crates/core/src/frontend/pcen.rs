//! Per-channel energy normalization as a fused differentiable operation.
//!
//! Forward, per channel:
//!
//! ```text
//! M(0) = E(0),  M(t) = (1 - s) M(t-1) + s E(t)
//! G(t) = E(t) / (eps + M(t))^alpha
//! out(t) = (G(t) + delta)^r - delta^r
//! ```
//!
//! The backward pass propagates through the smoother with the reverse-time
//! adjoint recurrence `a(t) = dM(t) + (1 - s) a(t+1)` instead of unrolling
//! the recurrence onto the graph.

use crate::tensor::{Scalar, Tensor};

/// PCEN over a `[channels, frames]` energy grid. `alpha`, `delta`, `root`
/// and `smooth` are per-channel `[channels]` tensors; gradients flow to
/// whichever of them (and the energy) require them.
///
/// Energies must be non-negative; the smoother then keeps `M >= 0`
/// throughout and the output is non-negative as well.
pub fn pcen<T: Scalar>(
    energy: &Tensor<T>,
    alpha: &Tensor<T>,
    delta: &Tensor<T>,
    root: &Tensor<T>,
    smooth: &Tensor<T>,
    epsilon: T,
) -> Tensor<T> {
    assert_eq!(energy.shape().len(), 2, "pcen expects [channels, frames]");
    let (c, frames) = (energy.shape()[0], energy.shape()[1]);
    for (name, t) in [("alpha", alpha), ("delta", delta), ("root", root), ("smooth", smooth)] {
        assert_eq!(t.shape(), &[c], "pcen {} must be [channels]", name);
    }
    debug_assert!(
        energy.values().iter().all(|&e| e >= T::zero()),
        "pcen energies must be non-negative"
    );

    let mut m = vec![T::zero(); c * frames];
    let mut gain = vec![T::zero(); c * frames];
    let mut out = vec![T::zero(); c * frames];
    {
        let ev = energy.values();
        let av = alpha.values();
        let dv = delta.values();
        let rv = root.values();
        let sv = smooth.values();
        for ch in 0..c {
            let row = ch * frames;
            let (a, d, r, s) = (av[ch], dv[ch], rv[ch], sv[ch]);
            let d_pow_r = d.powf(r);
            let mut m_prev = T::zero();
            for t in 0..frames {
                let e = ev[row + t];
                let mt = if t == 0 { e } else { (T::one() - s) * m_prev + s * e };
                m[row + t] = mt;
                let p = epsilon + mt;
                let g = if p > T::zero() { e / p.powf(a) } else { T::zero() };
                gain[row + t] = g;
                out[row + t] = (g + d).powf(r) - d_pow_r;
                m_prev = mt;
            }
        }
    }

    let (be, ba, bd, br, bs) = (
        energy.clone(),
        alpha.clone(),
        delta.clone(),
        root.clone(),
        smooth.clone(),
    );
    Tensor::from_op(
        vec![c, frames],
        out,
        vec![
            energy.clone(),
            alpha.clone(),
            delta.clone(),
            root.clone(),
            smooth.clone(),
        ],
        Box::new(move |dout: &[T]| {
            let ev = be.values();
            let av = ba.values();
            let dv = bd.values();
            let rv = br.values();
            let sv = bs.values();

            let want_e = be.requires_grad();
            let mut ge = if want_e { vec![T::zero(); c * frames] } else { Vec::new() };
            let mut g_alpha = vec![T::zero(); c];
            let mut g_delta = vec![T::zero(); c];
            let mut g_root = vec![T::zero(); c];
            let mut g_smooth = vec![T::zero(); c];

            let mut dm = vec![T::zero(); frames];
            for ch in 0..c {
                let row = ch * frames;
                let (a, d, r, s) = (av[ch], dv[ch], rv[ch], sv[ch]);
                let d_pow_r1 = d.powf(r - T::one());
                let ln_d = d.ln();
                for t in 0..frames {
                    let do_ = dout[row + t];
                    let g = gain[row + t];
                    let p = epsilon + m[row + t];
                    let gd = g + d;
                    let gd_pow_r1 = gd.powf(r - T::one());
                    let dg = do_ * r * gd_pow_r1;
                    g_delta[ch] = g_delta[ch] + do_ * r * (gd_pow_r1 - d_pow_r1);
                    g_root[ch] =
                        g_root[ch] + do_ * (gd.powf(r) * gd.ln() - d.powf(r) * ln_d);
                    if p > T::zero() {
                        let p_neg_a = p.powf(-a);
                        if want_e {
                            ge[row + t] = dg * p_neg_a;
                        }
                        // dG/dM = -a * E * P^(-a-1) = -a * G / P
                        dm[t] = -dg * a * g / p;
                        g_alpha[ch] = g_alpha[ch] - dg * g * p.ln();
                    } else {
                        dm[t] = T::zero();
                    }
                }
                // Reverse adjoint of the smoother. M(0) = E(0) feeds the
                // whole of a(0) into the first energy sample.
                let mut carry = T::zero();
                for t in (0..frames).rev() {
                    let at = dm[t] + (T::one() - s) * carry;
                    if t == 0 {
                        if want_e {
                            ge[row] = ge[row] + at;
                        }
                    } else {
                        if want_e {
                            ge[row + t] = ge[row + t] + s * at;
                        }
                        g_smooth[ch] = g_smooth[ch] + at * (ev[row + t] - m[row + t - 1]);
                    }
                    carry = at;
                }
            }

            drop(ev);
            drop(av);
            drop(dv);
            drop(rv);
            drop(sv);
            if want_e {
                be.accumulate_grad(&ge);
            }
            ba.accumulate_grad(&g_alpha);
            bd.accumulate_grad(&g_delta);
            br.accumulate_grad(&g_root);
            bs.accumulate_grad(&g_smooth);
        }),
    )
}

/// Running per-channel smoother state for frame-by-frame evaluation.
#[derive(Debug, Clone)]
pub struct PcenState {
    m: Vec<f32>,
    started: bool,
}

impl PcenState {
    pub fn new(channels: usize) -> Self {
        PcenState { m: vec![0.0; channels], started: false }
    }

    pub fn smoothed(&self) -> &[f32] {
        &self.m
    }

    /// Feeds one energy frame, returning the compressed frame.
    pub fn step(
        &mut self,
        frame: &[f32],
        alpha: &[f32],
        delta: &[f32],
        root: &[f32],
        smooth: &[f32],
        epsilon: f32,
    ) -> Vec<f32> {
        assert_eq!(frame.len(), self.m.len());
        let mut out = Vec::with_capacity(frame.len());
        for ch in 0..frame.len() {
            let e = frame[ch];
            let mt = if self.started {
                (1.0 - smooth[ch]) * self.m[ch] + smooth[ch] * e
            } else {
                e
            };
            self.m[ch] = mt;
            let g = e / (epsilon + mt).powf(alpha[ch]);
            out.push((g + delta[ch]).powf(root[ch]) - delta[ch].powf(root[ch]));
        }
        self.started = true;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, CoordSelection};
    use approx::assert_relative_eq;

    fn params64(c: usize) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        (
            Tensor::from_vec(&[c], vec![0.96; c]),
            Tensor::from_vec(&[c], vec![2.0; c]),
            Tensor::from_vec(&[c], vec![0.5; c]),
            Tensor::from_vec(&[c], vec![0.04; c]),
        )
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (a, d, r, s) = params64(3);
        let e = Tensor::from_vec(&[3, 10], vec![0.0; 30]);
        let out = pcen(&e, &a, &d, &r, &s, 1e-6);
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_input_steady_state_closed_form() {
        // E = 1 with defaults: M -> 1, G -> 1 (eps ~ 0),
        // out -> (1 + 2)^0.5 - 2^0.5 = sqrt(3) - sqrt(2).
        let (a, d, r, s) = params64(1);
        let frames = 1500;
        let e = Tensor::from_vec(&[1, frames], vec![1.0; frames]);
        let out = pcen(&e, &a, &d, &r, &s, 1e-6);
        let last = out.to_vec()[frames - 1];
        assert_relative_eq!(last, 3f64.sqrt() - 2f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn alpha_one_gain_invariance_on_constant_signals() {
        let c = 1;
        let a = Tensor::from_vec(&[c], vec![1.0]);
        let (_, d, r, s) = params64(c);
        let frames = 200;
        let base = pcen(
            &Tensor::from_vec(&[c, frames], vec![1.0; frames]),
            &a, &d, &r, &s, 0.0,
        );
        for scale in [0.5, 2.0, 10.0] {
            let scaled = pcen(
                &Tensor::from_vec(&[c, frames], vec![scale; frames]),
                &a, &d, &r, &s, 0.0,
            );
            // E/M = 1 identically for constant signals regardless of scale.
            assert_relative_eq!(
                scaled.to_vec()[frames - 1],
                base.to_vec()[frames - 1],
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn output_non_negative_for_non_negative_energy() {
        let (a, d, r, s) = params64(2);
        let vals: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let e = Tensor::from_vec(&[2, 20], vals);
        let out = pcen(&e, &a, &d, &r, &s, 1e-6);
        assert!(out.to_vec().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = 3;
        let frames = 12;
        let vals: Vec<f64> = (0..c * frames)
            .map(|i| 0.2 + (i as f64 * 0.61).sin().powi(2))
            .collect();
        let e = Tensor::param(&[c, frames], vals);
        let a = Tensor::param(&[c], vec![0.9, 1.0, 0.7]);
        let d = Tensor::param(&[c], vec![2.0, 1.5, 0.8]);
        let r = Tensor::param(&[c], vec![0.5, 0.4, 0.9]);
        let s = Tensor::param(&[c], vec![0.04, 0.2, 0.5]);
        let inputs = [e.clone(), a.clone(), d.clone(), r.clone(), s.clone()];
        let report = gradient_check(
            &inputs,
            || {
                let weights: Vec<f64> = (0..c * frames).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect();
                let w = Tensor::from_vec(&[c, frames], weights);
                pcen(&e, &a, &d, &r, &s, 1e-6).mul(&w).sum_all()
            },
            CoordSelection::All,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{:?}", report);
    }

    #[test]
    fn streaming_state_matches_batch() {
        let c = 2;
        let frames = 30;
        let vals: Vec<f64> = (0..c * frames).map(|i| (i as f64 * 0.23).cos().abs()).collect();
        let e = Tensor::from_vec(&[c, frames], vals.clone());
        let (a, d, r, s) = params64(c);
        let batch = pcen(&e, &a, &d, &r, &s, 1e-6).to_vec();

        let mut state = PcenState::new(c);
        let alpha = vec![0.96f32; c];
        let delta = vec![2.0f32; c];
        let root = vec![0.5f32; c];
        let smooth = vec![0.04f32; c];
        for t in 0..frames {
            let frame: Vec<f32> = (0..c).map(|ch| vals[ch * frames + t] as f32).collect();
            let out = state.step(&frame, &alpha, &delta, &root, &smooth, 1e-6);
            for ch in 0..c {
                assert_relative_eq!(out[ch] as f64, batch[ch * frames + t], epsilon = 1e-5);
            }
        }
    }
}
