//! 2-D batch normalization with running statistics.

use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};
use std::cell::{Cell, RefCell};

/// Per-channel batch normalization over `[B, C, H, W]`.
///
/// Train mode normalizes by batch statistics (biased variance) and updates
/// the running estimates by exponential moving average; eval mode uses the
/// running estimates and fails if they were never updated.
pub struct BatchNorm2d<T: Scalar> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: RefCell<Vec<T>>,
    running_var: RefCell<Vec<T>>,
    momentum: T,
    eps: T,
    initialized: Cell<bool>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]),
            running_mean: RefCell::new(vec![T::zero(); channels]),
            running_var: RefCell::new(vec![T::one(); channels]),
            momentum: T::of(0.1),
            eps: T::of(1e-5),
            initialized: Cell::new(false),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &Tensor<T> {
        &self.gamma
    }

    pub fn beta(&self) -> &Tensor<T> {
        &self.beta
    }

    pub fn running_stats(&self) -> (Vec<T>, Vec<T>) {
        (self.running_mean.borrow().clone(), self.running_var.borrow().clone())
    }

    pub fn set_running_stats(&self, mean: Vec<T>, var: Vec<T>) {
        assert_eq!(mean.len(), self.channels());
        assert_eq!(var.len(), self.channels());
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
        self.initialized.set(true);
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.get()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        assert_eq!(x.shape().len(), 4, "batchnorm expects [B, C, H, W]");
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let hw = h * w;
        let n = b * hw;
        let n_t = T::of(n as f64);

        let (mean, var) = match mode {
            Mode::Train => {
                let xv = x.values();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for bi in 0..b {
                        let plane = &xv[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
                        for &v in plane {
                            acc = acc + v;
                        }
                    }
                    mean[ch] = acc / n_t;
                    let mut acc2 = T::zero();
                    for bi in 0..b {
                        let plane = &xv[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
                        for &v in plane {
                            let d = v - mean[ch];
                            acc2 = acc2 + d * d;
                        }
                    }
                    var[ch] = acc2 / n_t;
                }
                drop(xv);
                {
                    let mut rm = self.running_mean.borrow_mut();
                    let mut rv = self.running_var.borrow_mut();
                    let keep = T::one() - self.momentum;
                    if self.initialized.get() {
                        for ch in 0..c {
                            rm[ch] = keep * rm[ch] + self.momentum * mean[ch];
                            rv[ch] = keep * rv[ch] + self.momentum * var[ch];
                        }
                    } else {
                        rm.copy_from_slice(&mean);
                        rv.copy_from_slice(&var);
                    }
                }
                self.initialized.set(true);
                (mean, var)
            }
            Mode::Eval => {
                if !self.initialized.get() {
                    return Err(Error::Numeric(
                        "batchnorm eval before any running-stat update".into(),
                    ));
                }
                (self.running_mean.borrow().clone(), self.running_var.borrow().clone())
            }
        };

        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();

        let mut xhat = vec![T::zero(); b * c * hw];
        let mut out = vec![T::zero(); b * c * hw];
        {
            let xv = x.values();
            let gv = self.gamma.values();
            let bv = self.beta.values();
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * hw;
                    let (m, is, g, be) = (mean[ch], invstd[ch], gv[ch], bv[ch]);
                    for i in 0..hw {
                        let xh = (xv[base + i] - m) * is;
                        xhat[base + i] = xh;
                        out[base + i] = g * xh + be;
                    }
                }
            }
        }

        let (bx, bg, bb) = (x.clone(), self.gamma.clone(), self.beta.clone());
        let batch_stats = mode == Mode::Train;
        Ok(Tensor::from_op(
            vec![b, c, h, w],
            out,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            Box::new(move |dout: &[T]| {
                let gv = bg.values();
                // Per-channel reductions shared by all gradients.
                let mut sum_d = vec![T::zero(); c];
                let mut sum_dx = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        for i in 0..hw {
                            sum_d[ch] = sum_d[ch] + dout[base + i];
                            sum_dx[ch] = sum_dx[ch] + dout[base + i] * xhat[base + i];
                        }
                    }
                }
                if bb.requires_grad() {
                    bb.accumulate_grad(&sum_d);
                }
                if bg.requires_grad() {
                    bg.accumulate_grad(&sum_dx);
                }
                if bx.requires_grad() {
                    let mut gx = vec![T::zero(); b * c * hw];
                    for bi in 0..b {
                        for ch in 0..c {
                            let base = (bi * c + ch) * hw;
                            let g = gv[ch];
                            let is = invstd[ch];
                            if batch_stats {
                                // d/dx of normalization by statistics of the
                                // same batch.
                                let k1 = sum_d[ch] / n_t;
                                let k2 = sum_dx[ch] / n_t;
                                for i in 0..hw {
                                    let dxh = dout[base + i] * g;
                                    gx[base + i] =
                                        is * (dxh - g * k1 - xhat[base + i] * g * k2);
                                }
                            } else {
                                for i in 0..hw {
                                    gx[base + i] = dout[base + i] * g * is;
                                }
                            }
                        }
                    }
                    drop(gv);
                    bx.accumulate_grad(&gx);
                }
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let bn = BatchNorm2d::<f64>::new(2);
        bn.set_running_stats(vec![0.0, 0.0], vec![1.0, 1.0]);
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, -2.0, 3.0, 0.5]);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn eval_before_init_errors() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]);
        assert!(bn.forward(&x, Mode::Eval).is_err());
    }

    #[test]
    fn train_normalizes_pm_one() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![-1.0, 1.0]);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let v = y.to_vec();
        // mean 0, var 1: outputs approximately +-1 * gamma + beta
        assert_relative_eq!(v[0], -1.0, epsilon = 1e-4);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn running_stats_update_moves_toward_batch() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![3.0, 5.0]);
        bn.forward(&x, Mode::Train).unwrap();
        let (m, v) = bn.running_stats();
        // First batch seeds the stats directly.
        assert_relative_eq!(m[0], 4.0);
        assert_relative_eq!(v[0], 1.0);
        let x2 = Tensor::from_vec(&[2, 1, 1, 1], vec![0.0, 0.0]);
        bn.forward(&x2, Mode::Train).unwrap();
        let (m2, _) = bn.running_stats();
        assert_relative_eq!(m2[0], 0.9 * 4.0, epsilon = 1e-12);
    }
}
