//! Strided 1-D and 2-D convolution (cross-correlation) with exact backward
//! passes.
//!
//! `conv1d` switches to an FFT overlap-save path for long stride-1
//! convolutions (the Gabor filterbank case: ~300-tap kernels over 220k
//! samples), where the direct form is two orders of magnitude slower. Both
//! paths compute the same quantity; the forward caches input-segment spectra
//! so the backward can reuse them for the kernel-gradient correlations.

use super::{Scalar, Tensor};
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use std::sync::Arc;

fn out_len(padded: usize, k: usize, stride: usize) -> usize {
    (padded - k) / stride + 1
}

/// `conv1d` with symmetric padding. Output frames:
/// `floor((time + 2*padding - klen) / stride) + 1`.
pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    conv1d_padded(input, kernels, stride, padding, padding)
}

/// `conv1d` with asymmetric padding (needed for "same" output lengths with
/// even kernels).
///
/// * `input`: `[batch, chan_in, time]`
/// * `kernels`: `[chan_out, chan_in, klen]`
/// * output: `[batch, chan_out, frames]`
pub fn conv1d_padded<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Tensor<T> {
    assert!(stride >= 1, "stride must be >= 1");
    assert_eq!(input.shape().len(), 3, "conv1d input must be [B, Ci, L]");
    assert_eq!(kernels.shape().len(), 3, "conv1d kernels must be [Co, Ci, K]");
    let (ci, l) = (input.shape()[1], input.shape()[2]);
    let (ci2, k) = (kernels.shape()[1], kernels.shape()[2]);
    assert_eq!(ci, ci2, "conv1d channel mismatch: input {} vs kernels {}", ci, ci2);
    let padded = l + pad_left + pad_right;
    assert!(
        k <= padded,
        "kernel length {} exceeds padded input length {}",
        k,
        padded
    );
    let frames = out_len(padded, k, stride);

    let use_fft = stride == 1 && k >= 32 && frames >= 1024;
    if use_fft {
        conv1d_fft(input, kernels, pad_left, pad_right, frames)
    } else {
        conv1d_direct(input, kernels, stride, pad_left, pad_right, frames)
    }
}

fn conv1d_direct<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
    frames: usize,
) -> Tensor<T> {
    let (b, ci, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, _, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);

    let pad_one = |x: &[T]| -> Vec<T> {
        let mut xp = vec![T::zero(); l + pad_left + pad_right];
        xp[pad_left..pad_left + l].copy_from_slice(x);
        xp
    };

    let mut out = vec![T::zero(); b * co * frames];
    {
        let xv = input.values();
        let kv = kernels.values();
        for bi in 0..b {
            for c_in in 0..ci {
                let xp = pad_one(&xv[(bi * ci + c_in) * l..(bi * ci + c_in + 1) * l]);
                for c_out in 0..co {
                    let kern = &kv[(c_out * ci + c_in) * k..(c_out * ci + c_in + 1) * k];
                    let orow = &mut out[(bi * co + c_out) * frames..(bi * co + c_out + 1) * frames];
                    for f in 0..frames {
                        let seg = &xp[f * stride..f * stride + k];
                        let mut acc = T::zero();
                        for t in 0..k {
                            acc = acc + seg[t] * kern[t];
                        }
                        orow[f] = orow[f] + acc;
                    }
                }
            }
        }
    }

    let (bin, bker) = (input.clone(), kernels.clone());
    Tensor::from_op(
        vec![b, co, frames],
        out,
        vec![input.clone(), kernels.clone()],
        Box::new(move |dout: &[T]| {
            let xv = bin.values();
            let kv = bker.values();
            if bker.requires_grad() {
                let mut gk = vec![T::zero(); co * ci * k];
                for bi in 0..b {
                    for c_in in 0..ci {
                        let x = &xv[(bi * ci + c_in) * l..(bi * ci + c_in + 1) * l];
                        for c_out in 0..co {
                            let drow = &dout[(bi * co + c_out) * frames..(bi * co + c_out + 1) * frames];
                            let gkrow = &mut gk[(c_out * ci + c_in) * k..(c_out * ci + c_in + 1) * k];
                            for f in 0..frames {
                                let d = drow[f];
                                if d == T::zero() {
                                    continue;
                                }
                                let base = f * stride;
                                for t in 0..k {
                                    let ip = base + t;
                                    if ip >= pad_left && ip < pad_left + l {
                                        gkrow[t] = gkrow[t] + d * x[ip - pad_left];
                                    }
                                }
                            }
                        }
                    }
                }
                bker.accumulate_grad(&gk);
            }
            if bin.requires_grad() {
                let mut gx = vec![T::zero(); b * ci * l];
                for bi in 0..b {
                    for c_out in 0..co {
                        let drow = &dout[(bi * co + c_out) * frames..(bi * co + c_out + 1) * frames];
                        for c_in in 0..ci {
                            let kern = &kv[(c_out * ci + c_in) * k..(c_out * ci + c_in + 1) * k];
                            let gxrow = &mut gx[(bi * ci + c_in) * l..(bi * ci + c_in + 1) * l];
                            for f in 0..frames {
                                let d = drow[f];
                                if d == T::zero() {
                                    continue;
                                }
                                let base = f * stride;
                                for t in 0..k {
                                    let ip = base + t;
                                    if ip >= pad_left && ip < pad_left + l {
                                        gxrow[ip - pad_left] = gxrow[ip - pad_left] + d * kern[t];
                                    }
                                }
                            }
                        }
                    }
                }
                drop(xv);
                drop(kv);
                bin.accumulate_grad(&gx);
            }
        }),
    )
}

/// Overlap-save machinery shared by the FFT forward and backward.
struct OverlapSave<T: Scalar> {
    /// FFT block size.
    n: usize,
    /// Valid outputs per block (`n - k + 1`).
    u: usize,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
}

impl<T: Scalar> OverlapSave<T> {
    fn new(k: usize) -> Self {
        let n = 4096.max((2 * k).next_power_of_two());
        let mut planner = RealFftPlanner::<T>::new();
        OverlapSave {
            n,
            u: n - k + 1,
            r2c: planner.plan_fft_forward(n),
            c2r: planner.plan_fft_inverse(n),
        }
    }

    fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// rfft of `x` zero-padded to the block size.
    fn spectrum(&self, x: &[T]) -> Vec<Complex<T>> {
        debug_assert!(x.len() <= self.n);
        let mut buf = vec![T::zero(); self.n];
        buf[..x.len()].copy_from_slice(x);
        let mut spec = self.r2c.make_output_vec();
        self.r2c.process(&mut buf, &mut spec).expect("rfft failed");
        spec
    }

    /// Spectra of the overlapping blocks `x[s..s+n]`, `s = 0, u, 2u, ...`,
    /// covering valid outputs `[0, total_out)`.
    fn segment_spectra(&self, x: &[T], total_out: usize) -> Vec<Vec<Complex<T>>> {
        let mut specs = Vec::new();
        let mut s = 0;
        while s < total_out {
            let hi = (s + self.n).min(x.len());
            specs.push(self.spectrum(&x[s..hi]));
            s += self.u;
        }
        specs
    }

    /// Inverse transform scaled by 1/n.
    fn inverse(&self, spec: &mut [Complex<T>], out: &mut [T]) {
        // Products of hermitian spectra can leave rounding dust on the
        // purely real bins; realfft requires them clean.
        spec[0].im = T::zero();
        let last = spec.len() - 1;
        spec[last].im = T::zero();
        self.c2r.process(spec, out).expect("irfft failed");
        let scale = T::one() / T::of(self.n as f64);
        for v in out.iter_mut() {
            *v = *v * scale;
        }
    }

    /// Valid correlation against cached block spectra:
    /// `out[f] += scale_correlation(x, kern)[f]` for `f` in `[0, out.len())`.
    fn correlate_into(&self, x_specs: &[Vec<Complex<T>>], kern: &[T], out: &mut [T]) {
        let kspec = self.spectrum(kern);
        let mut acc = vec![Complex::new(T::zero(), T::zero()); self.bins()];
        let mut time = vec![T::zero(); self.n];
        for (si, xs) in x_specs.iter().enumerate() {
            let s = si * self.u;
            if s >= out.len() {
                break;
            }
            for (a, (x, k)) in acc.iter_mut().zip(xs.iter().zip(kspec.iter())) {
                *a = *x * k.conj();
            }
            self.inverse(&mut acc, &mut time);
            let take = self.u.min(out.len() - s);
            for f in 0..take {
                out[s + f] = out[s + f] + time[f];
            }
        }
    }
}

fn conv1d_fft<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    pad_left: usize,
    pad_right: usize,
    frames: usize,
) -> Tensor<T> {
    let (b, ci, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, _, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    let lp = l + pad_left + pad_right;
    let os = OverlapSave::<T>::new(k);

    let needs_grad = input.requires_grad() || kernels.requires_grad();

    // Padded inputs and their block spectra, per (batch, channel-in).
    let mut padded: Vec<Vec<T>> = Vec::with_capacity(b * ci);
    let mut specs: Vec<Vec<Vec<Complex<T>>>> = Vec::with_capacity(b * ci);
    {
        let xv = input.values();
        for bi in 0..b {
            for c_in in 0..ci {
                let mut xp = vec![T::zero(); lp];
                xp[pad_left..pad_left + l]
                    .copy_from_slice(&xv[(bi * ci + c_in) * l..(bi * ci + c_in + 1) * l]);
                specs.push(os.segment_spectra(&xp, frames));
                padded.push(xp);
            }
        }
    }

    let mut out = vec![T::zero(); b * co * frames];
    {
        let kv = kernels.values();
        for bi in 0..b {
            for c_out in 0..co {
                let orow = &mut out[(bi * co + c_out) * frames..(bi * co + c_out + 1) * frames];
                for c_in in 0..ci {
                    let kern = &kv[(c_out * ci + c_in) * k..(c_out * ci + c_in + 1) * k];
                    os.correlate_into(&specs[bi * ci + c_in], kern, orow);
                }
            }
        }
    }

    if !needs_grad {
        return Tensor::from_vec(&[b, co, frames], out);
    }

    let (bin, bker) = (input.clone(), kernels.clone());
    Tensor::from_op(
        vec![b, co, frames],
        out,
        vec![input.clone(), kernels.clone()],
        Box::new(move |dout: &[T]| {
            let os = OverlapSave::<T>::new(k);
            let want_gk = bker.requires_grad();
            let want_gx = bin.requires_grad();
            let mut gk = if want_gk { vec![T::zero(); co * ci * k] } else { Vec::new() };
            // Gradient w.r.t. the padded input, cropped at the end.
            let mut gxp = if want_gx { vec![T::zero(); b * ci * lp] } else { Vec::new() };

            let kv = bker.values();
            let bins = os.bins();
            let mut time = vec![T::zero(); os.n];
            for bi in 0..b {
                // Accumulated spectra for the input gradient (one inverse
                // transform per segment per channel-in).
                let nseg = specs[bi * ci].len();
                let mut gx_acc: Vec<Vec<Complex<T>>> = if want_gx {
                    vec![vec![Complex::new(T::zero(), T::zero()); bins]; nseg * ci]
                } else {
                    Vec::new()
                };
                for c_out in 0..co {
                    let drow = &dout[(bi * co + c_out) * frames..(bi * co + c_out + 1) * frames];
                    // Block spectra of the output gradient, hop U.
                    let mut dspecs: Vec<Vec<Complex<T>>> = Vec::new();
                    let mut s = 0;
                    while s < frames {
                        let hi = (s + os.u).min(frames);
                        dspecs.push(os.spectrum(&drow[s..hi]));
                        s += os.u;
                    }
                    for c_in in 0..ci {
                        let kern = &kv[(c_out * ci + c_in) * k..(c_out * ci + c_in + 1) * k];
                        if want_gk {
                            // gk[t] = sum_f xp[f + t] * d[f]: valid correlation
                            // of the cached input blocks with the d blocks.
                            let xs = &specs[bi * ci + c_in];
                            let gkrow =
                                &mut gk[(c_out * ci + c_in) * k..(c_out * ci + c_in + 1) * k];
                            let mut acc = vec![Complex::new(T::zero(), T::zero()); bins];
                            for (si, ds) in dspecs.iter().enumerate() {
                                for (a, (x, d)) in
                                    acc.iter_mut().zip(xs[si].iter().zip(ds.iter()))
                                {
                                    *a = *x * d.conj();
                                }
                                os.inverse(&mut acc, &mut time);
                                for t in 0..k {
                                    gkrow[t] = gkrow[t] + time[t];
                                }
                            }
                        }
                        if want_gx {
                            // dxp = full convolution of d with the kernel,
                            // accumulated in the spectral domain.
                            let kspec = os.spectrum(kern);
                            for (si, ds) in dspecs.iter().enumerate() {
                                let acc = &mut gx_acc[c_in * nseg + si];
                                for (a, (d, ks)) in
                                    acc.iter_mut().zip(ds.iter().zip(kspec.iter()))
                                {
                                    *a = *a + *d * *ks;
                                }
                            }
                        }
                    }
                }
                if want_gx {
                    for c_in in 0..ci {
                        let grow = &mut gxp[(bi * ci + c_in) * lp..(bi * ci + c_in + 1) * lp];
                        for si in 0..nseg {
                            let s = si * os.u;
                            os.inverse(&mut gx_acc[c_in * nseg + si], &mut time);
                            // Overlap-add: each block contributes u + k - 1
                            // convolution outputs starting at offset s.
                            let span = (os.u + k - 1).min(lp.saturating_sub(s));
                            for t in 0..span {
                                grow[s + t] = grow[s + t] + time[t];
                            }
                        }
                    }
                }
            }
            drop(kv);
            if want_gk {
                bker.accumulate_grad(&gk);
            }
            if want_gx {
                let mut gx = vec![T::zero(); b * ci * l];
                for row in 0..b * ci {
                    gx[row * l..(row + 1) * l]
                        .copy_from_slice(&gxp[row * lp + pad_left..row * lp + pad_left + l]);
                }
                bin.accumulate_grad(&gx);
            }
        }),
    )
}

/// Per-channel (grouped) 1-D convolution: channel `c` of the input is
/// filtered by kernel row `c`.
///
/// * `input`: `[batch, chans, time]`, `kernels`: `[chans, klen]`
/// * output: `[batch, chans, frames]`
pub fn depthwise_conv1d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Tensor<T> {
    assert!(stride >= 1);
    assert_eq!(input.shape().len(), 3, "depthwise input must be [B, C, L]");
    assert_eq!(kernels.shape().len(), 2, "depthwise kernels must be [C, K]");
    let (b, c, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = kernels.shape()[1];
    assert_eq!(kernels.shape()[0], c, "depthwise channel mismatch");
    let lp = l + pad_left + pad_right;
    assert!(k <= lp, "kernel longer than padded input");
    let frames = out_len(lp, k, stride);

    let mut out = vec![T::zero(); b * c * frames];
    {
        let xv = input.values();
        let kv = kernels.values();
        for bi in 0..b {
            for ch in 0..c {
                let x = &xv[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                let kern = &kv[ch * k..(ch + 1) * k];
                let orow = &mut out[(bi * c + ch) * frames..(bi * c + ch + 1) * frames];
                for f in 0..frames {
                    let base = f * stride;
                    let mut acc = T::zero();
                    let t0 = pad_left.saturating_sub(base);
                    let t1 = k.min((pad_left + l).saturating_sub(base));
                    for t in t0..t1 {
                        acc = acc + x[base + t - pad_left] * kern[t];
                    }
                    orow[f] = acc;
                }
            }
        }
    }

    let (bin, bker) = (input.clone(), kernels.clone());
    Tensor::from_op(
        vec![b, c, frames],
        out,
        vec![input.clone(), kernels.clone()],
        Box::new(move |dout: &[T]| {
            let xv = bin.values();
            let kv = bker.values();
            if bker.requires_grad() {
                let mut gk = vec![T::zero(); c * k];
                for bi in 0..b {
                    for ch in 0..c {
                        let x = &xv[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                        let drow = &dout[(bi * c + ch) * frames..(bi * c + ch + 1) * frames];
                        let gkrow = &mut gk[ch * k..(ch + 1) * k];
                        for f in 0..frames {
                            let d = drow[f];
                            if d == T::zero() {
                                continue;
                            }
                            let base = f * stride;
                            let t0 = pad_left.saturating_sub(base);
                            let t1 = k.min((pad_left + l).saturating_sub(base));
                            for t in t0..t1 {
                                gkrow[t] = gkrow[t] + d * x[base + t - pad_left];
                            }
                        }
                    }
                }
                bker.accumulate_grad(&gk);
            }
            if bin.requires_grad() {
                let mut gx = vec![T::zero(); b * c * l];
                for bi in 0..b {
                    for ch in 0..c {
                        let kern = &kv[ch * k..(ch + 1) * k];
                        let drow = &dout[(bi * c + ch) * frames..(bi * c + ch + 1) * frames];
                        let gxrow = &mut gx[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                        for f in 0..frames {
                            let d = drow[f];
                            if d == T::zero() {
                                continue;
                            }
                            let base = f * stride;
                            let t0 = pad_left.saturating_sub(base);
                            let t1 = k.min((pad_left + l).saturating_sub(base));
                            for t in t0..t1 {
                                gxrow[base + t - pad_left] = gxrow[base + t - pad_left] + d * kern[t];
                            }
                        }
                    }
                }
                drop(xv);
                drop(kv);
                bin.accumulate_grad(&gx);
            }
        }),
    )
}

/// 2-D convolution with square stride/padding.
///
/// * `input`: `[batch, chan_in, h, w]`, `kernels`: `[chan_out, chan_in, kh, kw]`
/// * output: `[batch, chan_out, oh, ow]`
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    assert!(stride >= 1);
    assert_eq!(input.shape().len(), 4, "conv2d input must be [B, Ci, H, W]");
    assert_eq!(kernels.shape().len(), 4, "conv2d kernels must be [Co, Ci, Kh, Kw]");
    let (b, ci, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, ci2, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    assert_eq!(ci, ci2, "conv2d channel mismatch");
    assert!(kh <= h + 2 * padding && kw <= w + 2 * padding, "kernel larger than padded input");
    let oh = out_len(h + 2 * padding, kh, stride);
    let ow = out_len(w + 2 * padding, kw, stride);

    let mut out = vec![T::zero(); b * co * oh * ow];
    {
        let xv = input.values();
        let kv = kernels.values();
        for bi in 0..b {
            for c_out in 0..co {
                let oplane = &mut out[(bi * co + c_out) * oh * ow..(bi * co + c_out + 1) * oh * ow];
                for c_in in 0..ci {
                    let xplane = &xv[(bi * ci + c_in) * h * w..(bi * ci + c_in + 1) * h * w];
                    let kplane = &kv[(c_out * ci + c_in) * kh * kw..(c_out * ci + c_in + 1) * kh * kw];
                    for r in 0..oh {
                        for dkh in 0..kh {
                            let ih = (r * stride + dkh) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[ih as usize * w..(ih as usize + 1) * w];
                            let orow = &mut oplane[r * ow..(r + 1) * ow];
                            for dkw in 0..kw {
                                let kval = kplane[dkh * kw + dkw];
                                if kval == T::zero() {
                                    continue;
                                }
                                for cidx in 0..ow {
                                    let iw = (cidx * stride + dkw) as isize - padding as isize;
                                    if iw >= 0 && iw < w as isize {
                                        orow[cidx] = orow[cidx] + kval * xrow[iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let (bin, bker) = (input.clone(), kernels.clone());
    Tensor::from_op(
        vec![b, co, oh, ow],
        out,
        vec![input.clone(), kernels.clone()],
        Box::new(move |dout: &[T]| {
            let xv = bin.values();
            let kv = bker.values();
            let want_gk = bker.requires_grad();
            let want_gx = bin.requires_grad();
            let mut gk = if want_gk { vec![T::zero(); co * ci * kh * kw] } else { Vec::new() };
            let mut gx = if want_gx { vec![T::zero(); b * ci * h * w] } else { Vec::new() };
            for bi in 0..b {
                for c_out in 0..co {
                    let dplane = &dout[(bi * co + c_out) * oh * ow..(bi * co + c_out + 1) * oh * ow];
                    for c_in in 0..ci {
                        let xplane = &xv[(bi * ci + c_in) * h * w..(bi * ci + c_in + 1) * h * w];
                        let kplane =
                            &kv[(c_out * ci + c_in) * kh * kw..(c_out * ci + c_in + 1) * kh * kw];
                        for r in 0..oh {
                            for cidx in 0..ow {
                                let d = dplane[r * ow + cidx];
                                if d == T::zero() {
                                    continue;
                                }
                                for dkh in 0..kh {
                                    let ih = (r * stride + dkh) as isize - padding as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for dkw in 0..kw {
                                        let iw = (cidx * stride + dkw) as isize - padding as isize;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        let xi = ih as usize * w + iw as usize;
                                        if want_gk {
                                            let gi = (c_out * ci + c_in) * kh * kw + dkh * kw + dkw;
                                            gk[gi] = gk[gi] + d * xplane[xi];
                                        }
                                        if want_gx {
                                            let gi = (bi * ci + c_in) * h * w + xi;
                                            gx[gi] = gx[gi] + d * kplane[dkh * kw + dkw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            drop(xv);
            drop(kv);
            if want_gk {
                bker.accumulate_grad(&gk);
            }
            if want_gx {
                bin.accumulate_grad(&gx);
            }
        }),
    )
}
