//! Small dense-math helpers shared by the forward pass and the losses.

/// `out = x W + b` with `w` row-major `in_dim x out_dim`.
pub(crate) fn affine(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let out_dim = out.len();
    debug_assert_eq!(w.len(), x.len() * out_dim);
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for j in 0..out_dim {
            out[j] += xi * row[j];
        }
    }
}

/// Backward of [`affine`]: accumulates `dw += x ⊗ dy`, `db += dy` and, when
/// `dx` is given, `dx += W dy`.
pub(crate) fn affine_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let out_dim = dy.len();
    for j in 0..out_dim {
        db[j] += dy[j];
    }
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut dw[i * out_dim..(i + 1) * out_dim];
        for j in 0..out_dim {
            row[j] += xi * dy[j];
        }
    }
    if let Some(dx) = dx {
        for (i, dxi) in dx.iter_mut().enumerate() {
            let row = &w[i * out_dim..(i + 1) * out_dim];
            let mut acc = 0.0;
            for j in 0..out_dim {
                acc += row[j] * dy[j];
            }
            *dxi += acc;
        }
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Layer norm over the feature dimension with learned gain and bias.
/// Writes the normalized values into `xhat`, the result into `out`, and
/// returns `1/sqrt(var + eps)` for the backward pass.
pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], xhat: &mut [f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    inv_std
}

/// Backward of [`layer_norm`]. Accumulates `dgain`, `dbias` and writes the
/// input gradient into `dx` (overwriting it).
pub(crate) fn layer_norm_backward(
    xhat: &[f64],
    inv_std: f64,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let n = xhat.len() as f64;
    let mut sum_dxhat = 0.0;
    let mut sum_dxhat_xhat = 0.0;
    for i in 0..xhat.len() {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
        let dxh = dy[i] * gain[i];
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * xhat[i];
    }
    let mean_dxhat = sum_dxhat / n;
    let mean_dxhat_xhat = sum_dxhat_xhat / n;
    for i in 0..xhat.len() {
        let dxh = dy[i] * gain[i];
        dx[i] = inv_std * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

/// Numerically stable log-softmax.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - log_z).collect()
}

/// Numerically stable softmax written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// log(exp(a) + exp(b)) tolerating -inf boundary values.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
