//! Central finite-difference check of the analytic gradient.

use rayon::prelude::*;

use crate::corpus::Review;
use crate::error::{Error, Result};
use crate::hierarchy::{HierModel, Mode, TaskMask, TaskWeights};
use crate::params::ParamId;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_k |a_k - n_k| / max(|a_k|, |n_k|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index attaining the maximum.
    pub worst: Option<(String, usize)>,
    pub max_abs_error: f64,
    /// Smallest nonzero step of the numeric derivative: `ulp(L) / (2 eps)`.
    pub resolution: f64,
    /// Relative error over coordinates with `max(|a|, |n|) >= 1e5 * resolution`,
    /// where a few units of roundoff stay below a relative error of 1e-4.
    pub max_rel_error_resolved: f64,
    /// Coordinates below that bound.
    pub unresolved: usize,
    pub checked: usize,
}

const RESOLVABLE: f64 = 1e5;

fn ulp(x: f64) -> f64 {
    let x = x.abs();
    f64::from_bits(x.to_bits() + 1) - x
}

/// Compares the analytic gradient of the review objective with
/// `(L(theta + eps) - L(theta - eps)) / (2 eps)` for every parameter scalar.
/// Dropout is off.
pub fn grad_check(
    model: &HierModel<f64>,
    r: &Review,
    w: &TaskWeights,
    mask: &TaskMask,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut analytic = model.store().grads();
    let base = model.accumulate_gradient(r, w, mask, Mode::Eval, &mut analytic)?;
    if !base.is_finite() {
        return Err(Error::InvalidArgument("objective is not finite".into()));
    }
    let coords: Vec<(ParamId, usize)> = model
        .store()
        .iter()
        .flat_map(|(id, p)| (0..p.data.len()).map(move |i| (id, i)))
        .collect();
    let results = coords
        .par_iter()
        .map_init(
            || model.clone(),
            |m, &(id, i)| -> Result<(f64, f64)> {
                let orig = m.store().get(id).data[i];
                m.store_mut().get_mut(id).data[i] = orig + eps;
                let up = m.objective(r, w, mask)?;
                m.store_mut().get_mut(id).data[i] = orig - eps;
                let down = m.objective(r, w, mask)?;
                m.store_mut().get_mut(id).data[i] = orig;
                if !(up.is_finite() && down.is_finite()) {
                    return Err(Error::InvalidArgument("objective is not finite".into()));
                }
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.get(id)[i];
                Ok((a, numeric))
            },
        )
        .collect::<Result<Vec<(f64, f64)>>>()?;
    // One unit in the last place of the objective, seen through the
    // central difference.
    let resolution = ulp(base) / (2.0 * eps);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        max_abs_error: 0.0,
        resolution,
        max_rel_error_resolved: 0.0,
        unresolved: 0,
        checked: results.len(),
    };
    for (&(id, i), &(a, n)) in coords.iter().zip(&results) {
        let scale = a.abs().max(n.abs());
        let e = (a - n).abs() / scale.max(1e-8);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = Some((model.store().get(id).name.clone(), i));
        }
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
        if scale >= RESOLVABLE * resolution {
            report.max_rel_error_resolved = report.max_rel_error_resolved.max(e);
        } else {
            report.unresolved += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};
    use crate::hierarchy::{ModelSpec, Preset};

    fn review() -> (crate::corpus::Corpus, Review) {
        let c = generate_synthetic(
            &SynthSpec {
                n_reviews: 3,
                sentences: (2, 2),
                tokens: (3, 4),
                dims: crate::corpus::Dims::new(4, 2, 2),
                entities: 3,
                ..SynthSpec::default()
            },
            2,
        )
        .unwrap();
        let r = c.reviews[0].clone();
        (c, r)
    }

    #[test]
    fn linear_heads_are_exact() {
        let (c, r) = review();
        let m = HierModel::<f64>::new(ModelSpec::preset(Preset::AvgEmb, c.dims, c.entities), 1)
            .unwrap();
        let rep = grad_check(
            &m,
            &r,
            &TaskWeights::new(0.05, 0.5, 1.0),
            &TaskMask::JOINT,
            1e-6,
        )
        .unwrap();
        // agreement down to a few units of roundoff in the objective
        assert!(rep.max_abs_error < 4.0 * rep.resolution, "{rep:?}");
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn zero_parameters_agree() {
        let (c, r) = review();
        let mut m = HierModel::<f64>::new(ModelSpec::preset(Preset::AvgEmb, c.dims, c.entities), 1)
            .unwrap();
        m.store_mut().zero_all();
        let rep = grad_check(
            &m,
            &r,
            &TaskWeights::new(1.0, 1.0, 1.0),
            &TaskMask::JOINT,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn every_preset_is_consistent() {
        let (c, r) = review();
        for preset in Preset::ALL {
            let spec = ModelSpec::preset(preset, c.dims, c.entities).with_width_cap(3);
            let m = HierModel::<f64>::new(spec, 3).unwrap();
            let rep = grad_check(
                &m,
                &r,
                &TaskWeights::new(0.05, 0.5, 1.0),
                &TaskMask::JOINT,
                1e-6,
            )
            .unwrap();
            assert!(rep.max_rel_error_resolved < 1e-4, "{preset}: {rep:?}");
            assert!(
                rep.max_abs_error < 1e3 * rep.resolution,
                "{preset}: {rep:?}"
            );
        }
    }
}
