//! Finite-difference validation of analytic gradients. Central differences
//! in double precision, sampled per tensor so big models stay checkable.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arena::Arena;
use super::Model;
use crate::error::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Relative-error denominator floor, guarding near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Deterministically sample up to `per_tensor` coordinates from every tensor.
pub fn sample_coords(arena: &Arena, per_tensor: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for spec in arena.specs() {
        let n = spec.len();
        let take = per_tensor.min(n);
        let mut picked: Vec<usize> = sample(&mut rng, n, take).into_iter().collect();
        picked.sort_unstable();
        coords.extend(picked.into_iter().map(|i| spec.offset + i));
    }
    coords
}

pub fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(REL_ERR_FLOOR)
}

/// Compare `grads` against central finite differences of `loss` at the
/// current parameters, over the given coordinates.
pub fn grad_check(
    params: &mut Arena,
    grads: &Arena,
    mut loss: impl FnMut(&Arena) -> f64,
    coords: &[usize],
    step: f64,
) -> Result<GradCheckReport> {
    let mut max_rel = 0.0f64;
    for &idx in coords {
        let orig = params.data[idx];
        params.data[idx] = orig + step;
        let lp = loss(params);
        params.data[idx] = orig - step;
        let lm = loss(params);
        params.data[idx] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {idx}")));
        }
        let numeric = (lp - lm) / (2.0 * step);
        max_rel = max_rel.max(rel_err(numeric, grads.data[idx]));
    }
    Ok(GradCheckReport { max_rel_err: max_rel, coords_checked: coords.len() })
}

/// Model-level wrapper: perturbs trainable parameters only (the frozen half
/// has no gradients by construction).
pub fn grad_check_model(
    model: &mut Model,
    grads: &Arena,
    mut loss: impl FnMut(&Model) -> f64,
    per_tensor: usize,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let coords = sample_coords(&model.trainable, per_tensor, seed);
    let mut max_rel = 0.0f64;
    for &idx in &coords {
        let orig = model.trainable.data[idx];
        model.trainable.data[idx] = orig + step;
        let lp = loss(model);
        model.trainable.data[idx] = orig - step;
        let lm = loss(model);
        model.trainable.data[idx] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {idx}")));
        }
        let numeric = (lp - lm) / (2.0 * step);
        max_rel = max_rel.max(rel_err(numeric, grads.data[idx]));
    }
    Ok(GradCheckReport { max_rel_err: max_rel, coords_checked: coords.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ops;

    /// A pure linear map with squared-error loss has polynomial (degree-2)
    /// loss, so central differences are exact up to rounding.
    #[test]
    fn linear_model_squared_error_under_1e8() {
        let mut params = Arena::builder().tensor("w", &[3, 2]).tensor("b", &[2]).build();
        params
            .view_mut("w")
            .copy_from_slice(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        params.view_mut("b").copy_from_slice(&[0.05, -0.15]);
        let x = [1.0, -2.0, 0.5];
        let target = [0.25, -0.6];

        let loss = |a: &Arena| -> f64 {
            let y = ops::linear_forward(&x, a.view("w"), a.view("b"), 1, 3, 2);
            y.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum()
        };

        let y = ops::linear_forward(&x, params.view("w"), params.view("b"), 1, 3, 2);
        let dy: Vec<f64> = y.iter().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
        let mut grads = params.zeros_like();
        {
            let mut dw = vec![0.0; 6];
            let mut db = vec![0.0; 2];
            ops::linear_backward(&x, params.view("w"), &dy, 1, 3, 2, &mut dw, &mut db);
            grads.view_mut("w").copy_from_slice(&dw);
            grads.view_mut("b").copy_from_slice(&db);
        }
        let coords: Vec<usize> = (0..params.len()).collect();
        let report = grad_check(&mut params, &grads, loss, &coords, DEFAULT_FD_STEP).unwrap();
        assert_eq!(report.coords_checked, 8);
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn detects_a_corrupted_gradient() {
        let mut params = Arena::builder().tensor("w", &[2]).build();
        params.view_mut("w").copy_from_slice(&[0.4, -0.9]);
        let loss = |a: &Arena| -> f64 { a.view("w").iter().map(|v| v * v).sum() };
        let mut grads = params.zeros_like();
        grads.view_mut("w").copy_from_slice(&[0.8, 1.8]); // second should be −1.8
        let coords = [0usize, 1];
        let report = grad_check(&mut params, &grads, loss, &coords, DEFAULT_FD_STEP).unwrap();
        assert!(report.max_rel_err > 0.5);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut params = Arena::builder().tensor("w", &[1]).build();
        let grads = params.zeros_like();
        let loss = |_: &Arena| f64::NAN;
        assert!(matches!(
            grad_check(&mut params, &grads, loss, &[0], DEFAULT_FD_STEP),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sampled_coords_cover_every_tensor_deterministically() {
        let arena = Arena::builder()
            .tensor("a", &[100])
            .tensor("b", &[3])
            .tensor("c", &[50, 2])
            .build();
        let c1 = sample_coords(&arena, 5, 42);
        let c2 = sample_coords(&arena, 5, 42);
        assert_eq!(c1, c2);
        assert_eq!(c1.len(), 5 + 3 + 5);
        assert!(c1.iter().all(|&i| i < arena.len()));
        // At least one coordinate in each tensor's range.
        assert!(c1.iter().any(|&i| i < 100));
        assert!(c1.iter().any(|&i| (100..103).contains(&i)));
        assert!(c1.iter().any(|&i| i >= 103));
    }
}
