//! Training loss: L1 terms in both domains plus the sinogram structure
//! losses, bridged into the graph with their analytic gradients.

use ldct_core::conjugate::ConjugateMap;
use ldct_core::structure::structure_loss_raw;
use ldct_nn::params::Session;
use ldct_nn::tape::Var;
use ldct_nn::tensor::Scalar;

use crate::config::ModelConfig;
use crate::error::Result;

/// Structure loss of `s_hat` against the clean reference, registered as a
/// graph scalar. The value and gradient are computed at f64 by the
/// analytic implementation; backward scatters the gradient through the
/// node like any other op.
pub fn structure_loss_node<T: Scalar>(
    s: &Session<T>,
    s_hat: Var,
    s_nd: &[f64],
    map: &ConjugateMap,
) -> Result<Var> {
    let p = map.num_views;
    let d = map.num_detectors;
    let hat: Vec<f64> = s.tape.value(s_hat).iter().map(|v| v.as_f64()).collect();
    let (value, grad) = structure_loss_raw(&hat, s_nd, p, d, map);
    let grad_t: Vec<T> = grad.iter().map(|g| T::from_f64(*g)).collect();
    Ok(s.tape.scalar_with_grad(s_hat, value, grad_t)?)
}

/// Targets of one training sample, already on the tape as constants.
pub struct SampleTargets<T> {
    /// Clean sinogram leaf, shape (P, D).
    pub s_nd: Var,
    /// Clean sinogram values at f64 (for the structure loss).
    pub s_nd_f64: Vec<f64>,
    /// Clean image leaf, shape (1, W, W).
    pub i_nd: Var,
    /// Noisy image leaf, shape (1, W, W).
    pub i_ld: Var,
    /// Marker for the element type.
    pub _phantom: std::marker::PhantomData<T>,
}

/// Weighted total loss:
/// `w1*L1(s_hat, s_nd) + w2*(L_C + L_S) + w3*L1(i_hat, i_nd)
///  + w4*L1(i_noise, i_ld - i_nd)`.
pub fn total_loss<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    s_hat: Var,
    i_hat: Var,
    i_noise: Var,
    targets: &SampleTargets<T>,
    map: &ConjugateMap,
) -> Result<Var> {
    let tape = s.tape;
    let mut terms: Vec<Var> = Vec::with_capacity(4);
    let weighted = |v: Var, w: f64| if w == 1.0 { v } else { tape.scale(v, w) };

    if cfg.w_sino_l1 != 0.0 {
        terms.push(weighted(tape.l1_loss(s_hat, targets.s_nd)?, cfg.w_sino_l1));
    }
    if cfg.w_sisl != 0.0 {
        let sisl = structure_loss_node(s, s_hat, &targets.s_nd_f64, map)?;
        terms.push(weighted(sisl, cfg.w_sisl));
    }
    if cfg.w_img_l1 != 0.0 {
        terms.push(weighted(tape.l1_loss(i_hat, targets.i_nd)?, cfg.w_img_l1));
    }
    if cfg.w_noise_l1 != 0.0 {
        let noise_target = tape.sub(targets.i_ld, targets.i_nd)?;
        terms.push(weighted(tape.l1_loss(i_noise, noise_target)?, cfg.w_noise_l1));
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(total)
}
