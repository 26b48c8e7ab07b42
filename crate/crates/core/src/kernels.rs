//! Dense compute kernels for the neural-network tape ops.
//!
//! Convolutions use an explicitly padded copy of the input so the inner
//! loops run over contiguous rows, which the compiler can vectorize.

/// How convolution padding is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Repeat the nearest edge pixel. Constant images stay constant.
    Replicate,
    /// Fill with zeros.
    Zero,
}

/// Copy one `h x w` channel into an `(h+2p) x (w+2p)` buffer.
pub fn pad_channel(src: &[f64], h: usize, w: usize, p: usize, mode: Padding, dst: &mut [f64]) {
    let pw = w + 2 * p;
    debug_assert_eq!(dst.len(), (h + 2 * p) * pw);
    match mode {
        Padding::Zero => {
            dst.fill(0.0);
            for i in 0..h {
                dst[(i + p) * pw + p..(i + p) * pw + p + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        Padding::Replicate => {
            for pi in 0..h + 2 * p {
                let si = pi.saturating_sub(p).min(h - 1);
                let row = &src[si * w..(si + 1) * w];
                let drow = &mut dst[pi * pw..(pi + 1) * pw];
                for (pj, d) in drow.iter_mut().enumerate() {
                    let sj = pj.saturating_sub(p).min(w - 1);
                    *d = row[sj];
                }
            }
        }
    }
}

/// Scatter a gradient on the padded buffer back onto the unpadded channel.
pub fn unpad_accumulate(
    d_padded: &[f64],
    h: usize,
    w: usize,
    p: usize,
    mode: Padding,
    d_src: &mut [f64],
) {
    let pw = w + 2 * p;
    match mode {
        Padding::Zero => {
            for i in 0..h {
                let prow = &d_padded[(i + p) * pw + p..(i + p) * pw + p + w];
                let srow = &mut d_src[i * w..(i + 1) * w];
                for (s, g) in srow.iter_mut().zip(prow) {
                    *s += g;
                }
            }
        }
        Padding::Replicate => {
            for pi in 0..h + 2 * p {
                let si = pi.saturating_sub(p).min(h - 1);
                for pj in 0..pw {
                    let sj = pj.saturating_sub(p).min(w - 1);
                    d_src[si * w + sj] += d_padded[pi * pw + pj];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[f64]>,
    stride: usize,
    mode: Padding,
) -> (Vec<f64>, usize, usize) {
    let p = (kh - 1) / 2;
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;

    let mut padded = vec![0.0; cin * ph * pw];
    for c in 0..cin {
        pad_channel(
            &input[c * h * w..(c + 1) * h * w],
            h,
            w,
            p,
            mode,
            &mut padded[c * ph * pw..(c + 1) * ph * pw],
        );
    }

    let mut out = vec![0.0; cout * oh * ow];
    for oc in 0..cout {
        let ochan = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            ochan.fill(b[oc]);
        }
        for ic in 0..cin {
            let pchan = &padded[ic * ph * pw..(ic + 1) * ph * pw];
            let wbase = (oc * cin + ic) * kh * kw;
            for di in 0..kh {
                for dj in 0..kw {
                    let wv = weight[wbase + di * kw + dj];
                    if stride == 1 {
                        // Contiguous rows so the inner loop vectorizes.
                        for i in 0..oh {
                            let prow = &pchan[(i + di) * pw + dj..][..ow];
                            let orow = &mut ochan[i * ow..(i + 1) * ow];
                            for (o, p) in orow.iter_mut().zip(prow) {
                                *o += wv * p;
                            }
                        }
                    } else {
                        for i in 0..oh {
                            let prow = &pchan[(i * stride + di) * pw + dj..];
                            let orow = &mut ochan[i * ow..(i + 1) * ow];
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o += wv * prow[j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Gradients of `conv2d_forward`. Any of the three outputs can be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    mode: Padding,
    d_out: &[f64],
    oh: usize,
    ow: usize,
    need_dinput: bool,
    need_dweight: bool,
    need_dbias: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = (kh - 1) / 2;
    let (ph, pw) = (h + 2 * p, w + 2 * p);

    let padded = if need_dweight {
        let mut buf = vec![0.0; cin * ph * pw];
        for c in 0..cin {
            pad_channel(
                &input[c * h * w..(c + 1) * h * w],
                h,
                w,
                p,
                mode,
                &mut buf[c * ph * pw..(c + 1) * ph * pw],
            );
        }
        Some(buf)
    } else {
        None
    };

    let d_bias = if need_dbias {
        let mut db = vec![0.0; cout];
        for oc in 0..cout {
            db[oc] = d_out[oc * oh * ow..(oc + 1) * oh * ow].iter().sum();
        }
        Some(db)
    } else {
        None
    };

    let mut d_weight = if need_dweight {
        Some(vec![0.0; cout * cin * kh * kw])
    } else {
        None
    };
    let mut d_padded = if need_dinput {
        Some(vec![0.0; cin * ph * pw])
    } else {
        None
    };

    for oc in 0..cout {
        let dchan = &d_out[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..cin {
            let wbase = (oc * cin + ic) * kh * kw;
            for di in 0..kh {
                for dj in 0..kw {
                    if let Some(dp) = d_padded.as_deref_mut() {
                        let wv = weight[wbase + di * kw + dj];
                        let pchan = &mut dp[ic * ph * pw..(ic + 1) * ph * pw];
                        if stride == 1 {
                            for i in 0..oh {
                                let drow = &dchan[i * ow..(i + 1) * ow];
                                let prow = &mut pchan[(i + di) * pw + dj..][..ow];
                                for (p, g) in prow.iter_mut().zip(drow) {
                                    *p += wv * g;
                                }
                            }
                        } else {
                            for i in 0..oh {
                                let drow = &dchan[i * ow..(i + 1) * ow];
                                let prow = &mut pchan[(i * stride + di) * pw + dj..];
                                for (j, g) in drow.iter().enumerate() {
                                    prow[j * stride] += wv * g;
                                }
                            }
                        }
                    }
                    if let Some(dw) = d_weight.as_deref_mut() {
                        let pall = padded.as_deref().unwrap();
                        let pchan = &pall[ic * ph * pw..(ic + 1) * ph * pw];
                        let mut acc = 0.0;
                        if stride == 1 {
                            for i in 0..oh {
                                let drow = &dchan[i * ow..(i + 1) * ow];
                                let prow = &pchan[(i + di) * pw + dj..][..ow];
                                acc += prow.iter().zip(drow).map(|(p, g)| p * g).sum::<f64>();
                            }
                        } else {
                            for i in 0..oh {
                                let drow = &dchan[i * ow..(i + 1) * ow];
                                let prow = &pchan[(i * stride + di) * pw + dj..];
                                for (j, g) in drow.iter().enumerate() {
                                    acc += prow[j * stride] * g;
                                }
                            }
                        }
                        dw[wbase + di * kw + dj] += acc;
                    }
                }
            }
        }
    }

    let d_input = d_padded.map(|dp| {
        let mut di = vec![0.0; cin * h * w];
        for c in 0..cin {
            unpad_accumulate(
                &dp[c * ph * pw..(c + 1) * ph * pw],
                h,
                w,
                p,
                mode,
                &mut di[c * h * w..(c + 1) * h * w],
            );
        }
        di
    });

    (d_input, d_weight, d_bias)
}

/// 2x2 max pooling with stride 2. Returns pooled values and the flat input
/// index of each winner (first occurrence wins ties, scan order).
pub fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    let mut argmax = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let ichan = &input[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = (2 * i) * w + 2 * j;
                let mut best = ichan[best_idx];
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * i + di) * w + (2 * j + dj);
                    if ichan[idx] > best {
                        best = ichan[idx];
                        best_idx = idx;
                    }
                }
                out[(ch * oh + i) * ow + j] = best;
                argmax[(ch * oh + i) * ow + j] = (ch * h * w + best_idx) as u32;
            }
        }
    }
    (out, argmax)
}

pub fn linear_forward(input: &[f64], weight: &[f64], bias: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (row, o) in out.iter_mut().enumerate() {
        let wrow = &weight[row * n..(row + 1) * n];
        let mut acc = bias[row];
        for (wv, xv) in wrow.iter().zip(input) {
            acc += wv * xv;
        }
        *o = acc;
    }
    out
}

/// Backward of `linear_forward` w.r.t. input: `dx = W^T d_out`.
pub fn linear_backward_input(weight: &[f64], d_out: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n];
    for row in 0..m {
        let g = d_out[row];
        let wrow = &weight[row * n..(row + 1) * n];
        for (d, wv) in dx.iter_mut().zip(wrow) {
            *d += g * wv;
        }
    }
    dx
}
