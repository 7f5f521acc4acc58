//! Bottleneck operators.

use crate::diffnum::{sample_gumbel, sample_normal, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Gumbel-softmax weighted combination of codebook rows.
///
/// `logits = -||z_j - e_i||^2`; with noise, `w = softmax((logits + scale * g) / beta)`
/// for unit Gumbel `g`, otherwise `w = softmax(logits / beta)`. Returns
/// `(s = w * E, w)`. Gradients reach both `z` and the codebook.
pub fn quantize_vqdiff(
    tape: &mut Tape,
    z: Var,
    codebook: Var,
    beta_temp: f64,
    gumbel_scale: f64,
    noise: Option<&mut Rng>,
) -> Result<(Var, Var)> {
    if !(beta_temp > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {beta_temp}")));
    }
    let dist = tape.sq_dist(z, codebook)?;
    let logits = tape.scale(dist, -1.0)?;
    let logits = match noise {
        Some(rng) => {
            let shape = tape.shape(logits).to_vec();
            let g = sample_gumbel(rng, &shape);
            let g = tape.constant(g);
            let g = tape.scale(g, gumbel_scale)?;
            tape.add(logits, g)?
        }
        None => logits,
    };
    let w = tape.softmax_temp(logits, beta_temp)?;
    let s = tape.matmul(w, codebook)?;
    Ok((s, w))
}

/// Index of the nearest codebook row for each row of `z`; ties go to the
/// lowest index.
pub fn nearest_codes(z: &Tensor, codebook: &Tensor) -> Vec<usize> {
    let d = codebook.shape()[1];
    let k = codebook.shape()[0];
    z.data()
        .chunks_exact(d)
        .map(|zi| {
            let mut best = (0, f64::INFINITY);
            for j in 0..k {
                let ej = &codebook.data()[j * d..][..d];
                let dist: f64 = zi.iter().zip(ej).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            best.0
        })
        .collect()
}

/// Values held fixed when re-evaluating a straight-through forward pass, so a
/// finite-difference oracle sees the surrogate objective the backward rule
/// differentiates.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenQuantization {
    pub indices: Vec<usize>,
    /// `e_idx - z` at the base point.
    pub offset: Tensor,
    pub z: Tensor,
    pub codes: Tensor,
}

#[derive(Clone, Debug)]
pub struct VqOutput {
    /// Straight-through quantized latent (forward value `e_idx`, gradient to `z`).
    pub s: Var,
    /// `e_idx` as a function of the codebook.
    pub codes: Var,
    /// Stop-gradient copies used by the auxiliary losses.
    pub z_sg: Var,
    pub codes_sg: Var,
    pub indices: Vec<usize>,
}

/// Nearest-code quantization with a straight-through backward rule.
pub fn quantize_vqvae(
    tape: &mut Tape,
    z: Var,
    codebook: Var,
    frozen: Option<&FrozenQuantization>,
) -> Result<VqOutput> {
    let (zs, es) = (tape.shape(z).to_vec(), tape.shape(codebook).to_vec());
    if zs.len() != 2 || es.len() != 2 || zs[1] != es[1] {
        return Err(Error::shape("quantize_vqvae", format!("latents {zs:?} vs codebook {es:?}")));
    }
    match frozen {
        None => {
            let indices = nearest_codes(tape.value(z), tape.value(codebook));
            let codes = tape.gather_rows(codebook, &indices)?;
            let value = tape.value(codes).clone();
            let s = tape.straight_through(z, value)?;
            let z_sg = tape.detach(z);
            let codes_sg = tape.detach(codes);
            Ok(VqOutput { s, codes, z_sg, codes_sg, indices })
        }
        Some(f) => {
            let codes = tape.gather_rows(codebook, &f.indices)?;
            let offset = tape.constant(f.offset.clone());
            let s = tape.add(z, offset)?;
            let z_sg = tape.constant(f.z.clone());
            let codes_sg = tape.constant(f.codes.clone());
            Ok(VqOutput { s, codes, z_sg, codes_sg, indices: f.indices.clone() })
        }
    }
}

impl FrozenQuantization {
    pub fn capture(tape: &Tape, z: Var, out: &VqOutput) -> Self {
        let zt = tape.value(z).clone();
        let ct = tape.value(out.codes).clone();
        let offset = Tensor::new(
            zt.shape().to_vec(),
            ct.data().iter().zip(zt.data()).map(|(e, z)| e - z).collect(),
        )
        .expect("same shape");
        FrozenQuantization { indices: out.indices.clone(), offset, z: zt, codes: ct }
    }
}

/// Running statistics for the exponential-moving-average codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub counts: Vec<f64>,
    /// `[k, d]` running sums of assigned latents.
    pub sums: Tensor,
}

impl EmaState {
    /// Prior count 1 per entry with sums equal to the initial codebook, so that
    /// `sums / counts` reproduces it.
    pub fn new(codebook: &Tensor) -> Self {
        EmaState {
            counts: vec![1.0; codebook.shape()[0]],
            sums: codebook.clone(),
        }
    }
}

/// One EMA codebook update from a batch of latents and their assignments.
pub fn quantize_vqema_update(
    z: &Tensor,
    assignments: &[usize],
    codebook: &mut Tensor,
    state: &mut EmaState,
    decay: f64,
    eps: f64,
) -> Result<()> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidArgument(format!("EMA decay must lie in (0, 1), got {decay}")));
    }
    let (k, d) = (codebook.shape()[0], codebook.shape()[1]);
    if z.shape().len() != 2 || z.shape()[1] != d || z.shape()[0] != assignments.len() {
        return Err(Error::shape(
            "quantize_vqema_update",
            format!("latents {:?} with {} assignments for codebook {:?}", z.shape(), assignments.len(), codebook.shape()),
        ));
    }
    let mut n = vec![0.0; k];
    let mut batch_sums = vec![0.0; k * d];
    for (row, &i) in z.data().chunks_exact(d).zip(assignments) {
        if i >= k {
            return Err(Error::InvalidArgument(format!("assignment {i} out of {k} codes")));
        }
        n[i] += 1.0;
        for (acc, v) in batch_sums[i * d..][..d].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for i in 0..k {
        state.counts[i] = decay * state.counts[i] + (1.0 - decay) * n[i];
    }
    for (m, b) in state.sums.data_mut().iter_mut().zip(&batch_sums) {
        *m = decay * *m + (1.0 - decay) * b;
    }
    let total: f64 = state.counts.iter().sum();
    for i in 0..k {
        let smoothed = (state.counts[i] + eps) / (total + k as f64 * eps) * total;
        let src = &state.sums.data()[i * d..][..d];
        let dst = &mut codebook.data_mut()[i * d..][..d];
        for (e, m) in dst.iter_mut().zip(src) {
            *e = m / smoothed;
        }
    }
    Ok(())
}

/// Reparameterized Gaussian sample and its KL to N(0, I).
///
/// `kl = mean over rows of 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar)`.
/// Without noise the sample is `mu`.
pub fn bottleneck_vae(
    tape: &mut Tape,
    mu: Var,
    logvar: Var,
    noise: Option<&mut Rng>,
) -> Result<(Var, Var)> {
    let shape = tape.shape(mu).to_vec();
    if tape.shape(logvar) != shape.as_slice() || shape.len() != 2 {
        return Err(Error::shape("bottleneck_vae", format!("mu {shape:?} vs logvar {:?}", tape.shape(logvar))));
    }
    let sampled = match noise {
        Some(rng) => {
            let eps = tape.constant(sample_normal(rng, &shape));
            let half = tape.scale(logvar, 0.5)?;
            let std = tape.exp(half)?;
            let offset = tape.mul(std, eps)?;
            tape.add(mu, offset)?
        }
        None => mu,
    };
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let t = tape.add(mu2, var)?;
    let t = tape.sub(t, logvar)?;
    let total = tape.sum(t)?;
    // sum(mu^2 + var - logvar) - rows * d, halved and averaged over rows
    let rows = shape[0] as f64;
    let ones = tape.constant(Tensor::scalar(shape[0] as f64 * shape[1] as f64));
    let total = tape.sub(total, ones)?;
    let kl = tape.scale(total, 0.5 / rows)?;
    Ok((sampled, kl))
}
