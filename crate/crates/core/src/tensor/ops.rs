//! Elementwise, linear and structural operations.
//!
//! Binary arithmetic broadcasts with numpy semantics (align right, dimension
//! sizes must match or be 1). Backward passes sum-reduce gradients over the
//! broadcast dimensions.

use super::{Mode, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Broadcast result shape, panicking on incompatible inputs.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "shapes {:?} and {:?} are not broadcast-compatible",
            a,
            b
        );
        out[i] = da.max(db);
    }
    out
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Strides of `shape` viewed as `out_rank` dims, 0 where broadcast.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let own = row_major_strides(shape);
    let mut out = vec![0usize; rank];
    let offset = rank - shape.len();
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    out
}

/// Walks an output shape yielding `(out_index, a_offset, b_offset)`.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let len: usize = out_shape.iter().product();
    if len == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for i in 0..len {
        f(i, oa, ob);
        // Odometer increment from the innermost dimension.
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Shared machinery for broadcast binary ops. `f` computes the value,
    /// `dfa`/`dfb` the partials given `(a_value, b_value)`.
    fn binary_broadcast(
        &self,
        other: &Tensor<T>,
        f: impl Fn(T, T) -> T,
        dfa: impl Fn(T, T) -> T + 'static,
        dfb: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let a = self.clone();
        let b = other.clone();
        let out_shape = broadcast_shape(a.shape(), b.shape());
        let equal_shapes = a.shape() == out_shape.as_slice() && b.shape() == out_shape.as_slice();
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);

        let values = {
            let av = a.values();
            let bv = b.values();
            if equal_shapes {
                av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let mut out = vec![T::zero(); out_shape.iter().product()];
                for_each_broadcast(&out_shape, &sa, &sb, |i, ia, ib| {
                    out[i] = f(av[ia], bv[ib]);
                });
                out
            }
        };

        let (ba, bb) = (a.clone(), b.clone());
        let shape_for_back = out_shape.clone();
        Tensor::from_op(
            out_shape,
            values,
            vec![a, b],
            Box::new(move |dout: &[T]| {
                if ba.requires_grad() {
                    let av = ba.values();
                    let bv = bb.values();
                    let mut ga = vec![T::zero(); av.len()];
                    if equal_shapes {
                        for i in 0..dout.len() {
                            ga[i] = dout[i] * dfa(av[i], bv[i]);
                        }
                    } else {
                        for_each_broadcast(&shape_for_back, &sa, &sb, |i, ia, ib| {
                            ga[ia] = ga[ia] + dout[i] * dfa(av[ia], bv[ib]);
                        });
                    }
                    drop(av);
                    drop(bv);
                    ba.accumulate_grad(&ga);
                }
                if bb.requires_grad() {
                    let av = ba.values();
                    let bv = bb.values();
                    let mut gb = vec![T::zero(); bv.len()];
                    if equal_shapes {
                        for i in 0..dout.len() {
                            gb[i] = dout[i] * dfb(av[i], bv[i]);
                        }
                    } else {
                        for_each_broadcast(&shape_for_back, &sa, &sb, |i, ia, ib| {
                            gb[ib] = gb[ib] + dout[i] * dfb(av[ia], bv[ib]);
                        });
                    }
                    drop(av);
                    drop(bv);
                    bb.accumulate_grad(&gb);
                }
            }),
        )
    }

    /// Unary op whose derivative only needs the input value.
    fn unary_in(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let a = self.clone();
        let values: Vec<T> = a.values().iter().map(|&x| f(x)).collect();
        let ba = a.clone();
        Tensor::from_op(
            a.shape().to_vec(),
            values,
            vec![a],
            Box::new(move |dout: &[T]| {
                let g: Vec<T> = {
                    let av = ba.values();
                    dout.iter().zip(av.iter()).map(|(&d, &x)| d * df(x)).collect()
                };
                ba.accumulate_grad(&g);
            }),
        )
    }

    /// Unary op whose derivative is cheapest in terms of the output value
    /// (saved at record time).
    fn unary_out(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let a = self.clone();
        let values: Vec<T> = a.values().iter().map(|&x| f(x)).collect();
        let saved_out = if a.requires_grad() { values.clone() } else { Vec::new() };
        let ba = a.clone();
        Tensor::from_op(
            a.shape().to_vec(),
            values,
            vec![a],
            Box::new(move |dout: &[T]| {
                let g: Vec<T> = dout
                    .iter()
                    .zip(saved_out.iter())
                    .map(|(&d, &y)| d * df(y))
                    .collect();
                ba.accumulate_grad(&g);
            }),
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary_broadcast(other, |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary_broadcast(other, |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary_broadcast(other, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary_broadcast(other, |x, y| x / y, |_, y| T::one() / y, |x, y| -x / (y * y))
    }

    /// Elementwise `self ^ other` (broadcast). The base must be positive
    /// wherever the exponent gradient is needed; checking mode panics on
    /// negative bases.
    pub fn pow(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary_broadcast(
            other,
            |x, y| {
                if T::CHECKING && x < T::zero() {
                    panic!("pow of negative base {} in checking mode", x);
                }
                x.powf(y)
            },
            |x, y| y * x.powf(y - T::one()),
            |x, y| {
                if x == T::zero() {
                    T::zero()
                } else {
                    x.powf(y) * x.ln()
                }
            },
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary_in(|x| -x, |_| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary_out(|x| x.exp(), |out| out)
    }

    pub fn log(&self) -> Tensor<T> {
        self.unary_in(
            |x| {
                if T::CHECKING && x < T::zero() {
                    panic!("log of negative value {} in checking mode", x);
                }
                x.ln()
            },
            |x| T::one() / x,
        )
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary_out(
            |x| {
                if T::CHECKING && x < T::zero() {
                    panic!("sqrt of negative value {} in checking mode", x);
                }
                x.sqrt()
            },
            |out| T::one() / (out + out),
        )
    }

    pub fn sin(&self) -> Tensor<T> {
        self.unary_in(|x| x.sin(), |x| x.cos())
    }

    pub fn cos(&self) -> Tensor<T> {
        self.unary_in(|x| x.cos(), |x| -x.sin())
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary_in(|x| x * x, |x| x + x)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary_in(
            |x| if x > T::zero() { x } else { T::zero() },
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary_in(move |x| x * c, move |_| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary_in(move |x| x + c, |_| T::one())
    }

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let a = self.clone();
        let b = other.clone();
        assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D");
        assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D");
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        assert_eq!(k, k2, "matmul inner dimensions differ: {} vs {}", k, k2);

        let mut out = vec![T::zero(); m * n];
        {
            let av = a.values();
            let bv = b.values();
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] = orow[j] + aip * brow[j];
                    }
                }
            }
        }

        let (ba, bb) = (a.clone(), b.clone());
        Tensor::from_op(
            vec![m, n],
            out,
            vec![a, b],
            Box::new(move |dout: &[T]| {
                if ba.requires_grad() {
                    // dA = dOut · Bᵀ
                    let bv = bb.values();
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let d = dout[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] = ga[i * k + p] + d * bv[p * n + j];
                            }
                        }
                    }
                    drop(bv);
                    ba.accumulate_grad(&ga);
                }
                if bb.requires_grad() {
                    // dB = Aᵀ · dOut
                    let av = ba.values();
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] = gb[p * n + j] + aip * dout[i * n + j];
                            }
                        }
                    }
                    drop(av);
                    bb.accumulate_grad(&gb);
                }
            }),
        )
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let a = self.clone();
        let total = a.values().iter().fold(T::zero(), |acc, &x| acc + x);
        let ba = a.clone();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![a],
            Box::new(move |dout: &[T]| {
                let g = vec![dout[0]; ba.len()];
                ba.accumulate_grad(&g);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::of(self.len() as f64);
        self.sum_all().scale(T::one() / n)
    }

    /// Sum over the last axis, keeping it as size 1.
    pub fn sum_last_keepdim(&self) -> Tensor<T> {
        let a = self.clone();
        let shape = a.shape().to_vec();
        let last = *shape.last().expect("sum_last_keepdim on 0-rank tensor");
        let rows = a.len() / last;
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = 1;
        let mut out = vec![T::zero(); rows];
        {
            let av = a.values();
            for r in 0..rows {
                out[r] = av[r * last..(r + 1) * last]
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x);
            }
        }
        let ba = a.clone();
        Tensor::from_op(
            out_shape,
            out,
            vec![a],
            Box::new(move |dout: &[T]| {
                let mut g = vec![T::zero(); ba.len()];
                for r in 0..rows {
                    for c in 0..last {
                        g[r * last + c] = dout[r];
                    }
                }
                ba.accumulate_grad(&g);
            }),
        )
    }

    /// Same data, new shape (element count preserved).
    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<T> {
        let a = self.clone();
        assert_eq!(
            new_shape.iter().product::<usize>(),
            a.len(),
            "reshape {:?} -> {:?} changes element count",
            a.shape(),
            new_shape
        );
        let values = a.to_vec();
        let ba = a.clone();
        Tensor::from_op(
            new_shape.to_vec(),
            values,
            vec![a],
            Box::new(move |dout: &[T]| {
                ba.accumulate_grad(dout);
            }),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(tensors: &[Tensor<T>]) -> Tensor<T> {
        assert!(!tensors.is_empty(), "stack of zero tensors");
        let item_shape = tensors[0].shape().to_vec();
        let item_len: usize = item_shape.iter().product();
        let mut values = Vec::with_capacity(tensors.len() * item_len);
        for t in tensors {
            assert_eq!(t.shape(), item_shape.as_slice(), "stack shape mismatch");
            values.extend_from_slice(&t.values());
        }
        let mut out_shape = vec![tensors.len()];
        out_shape.extend_from_slice(&item_shape);
        let parents: Vec<Tensor<T>> = tensors.to_vec();
        let back_parents = parents.clone();
        Tensor::from_op(
            out_shape,
            values,
            parents,
            Box::new(move |dout: &[T]| {
                for (i, p) in back_parents.iter().enumerate() {
                    if p.requires_grad() {
                        p.accumulate_grad(&dout[i * item_len..(i + 1) * item_len]);
                    }
                }
            }),
        )
    }

    /// Per-channel mean over the spatial axes: `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn adaptive_avg_pool_to_1x1(&self) -> Tensor<T> {
        let a = self.clone();
        assert_eq!(a.shape().len(), 4, "pool expects [B, C, H, W]");
        let (b, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let mut out = vec![T::zero(); b * c];
        {
            let av = a.values();
            for i in 0..b * c {
                out[i] = av[i * hw..(i + 1) * hw]
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x)
                    * inv;
            }
        }
        let ba = a.clone();
        Tensor::from_op(
            vec![b, c, 1, 1],
            out,
            vec![a],
            Box::new(move |dout: &[T]| {
                let mut g = vec![T::zero(); b * c * hw];
                for i in 0..b * c {
                    let d = dout[i] * inv;
                    for j in 0..hw {
                        g[i * hw + j] = d;
                    }
                }
                ba.accumulate_grad(&g);
            }),
        )
    }

    /// Inverted dropout. Train mode zeroes each element with probability
    /// `rate` and scales survivors by `1/(1-rate)`; eval mode is exactly the
    /// identity (the same tensor is returned).
    pub fn dropout(&self, rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor<T> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        if mode == Mode::Eval || rate == 0.0 {
            return self.clone();
        }
        let a = self.clone();
        let keep_scale = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..a.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let values: Vec<T> = a
            .values()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| x * m)
            .collect();
        let ba = a.clone();
        Tensor::from_op(
            a.shape().to_vec(),
            values,
            vec![a],
            Box::new(move |dout: &[T]| {
                let g: Vec<T> = dout.iter().zip(mask.iter()).map(|(&d, &m)| d * m).collect();
                ba.accumulate_grad(&g);
            }),
        )
    }
}
