//! Central finite-difference oracle for reverse-mode adjoints.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::Result;
use crate::rng::rng_from;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
    FivePoint,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Coordinates sampled per parameter tensor (all of them when the tensor is smaller).
    pub coords_per_param: usize,
    /// Step is `rel_step * max(1, |x|)`.
    pub rel_step: f64,
    /// Denominator floor of the relative error, for adjoints that are exactly zero.
    pub abs_floor: f64,
    pub stencil: Stencil,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            coords_per_param: 20,
            rel_step: 1e-6,
            abs_floor: 1e-8,
            stencil: Stencil::ThreePoint,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn coordinates(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares adjoints of the scalar built by `build` against finite differences
/// for every trainable parameter of `store`.
///
/// `build` must be a deterministic function of the parameter values.
pub fn finite_difference_check<T, F>(
    store: &mut ParamStore<T>,
    mut build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    let grads = g.backward(root)?.params(store);
    drop(g);

    let mut eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let root = build(&mut g, store)?;
        Ok(g.scalar(root)?.to_f64_lossy())
    };

    let mut rng = rng_from(opts.seed, &[0x6772_6164]);
    let ids: Vec<_> = store.ids().collect();
    let mut report = Vec::new();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.get(id).values.len();
        let analytic_all = grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![T::zero(); n]);
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &c in &coords {
            let x0 = store.get(id).values[c];
            let h = opts.rel_step * x0.to_f64_lossy().abs().max(1.0);
            // representable step, so that (x0 + h) - x0 == h exactly
            let h = ((x0 + T::lit(h)) - x0).to_f64_lossy();
            let mut at = |offset: f64, store: &mut ParamStore<T>| -> Result<f64> {
                store.get_mut(id).values[c] = x0 + T::lit(offset);
                let v = eval(store);
                store.get_mut(id).values[c] = x0;
                v
            };
            let numeric = match opts.stencil {
                Stencil::ThreePoint => (at(h, store)? - at(-h, store)?) / (2.0 * h),
                Stencil::FivePoint => {
                    let f2 = at(2.0 * h, store)?;
                    let f1 = at(h, store)?;
                    let m1 = at(-h, store)?;
                    let m2 = at(-2.0 * h, store)?;
                    (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h)
                }
            };
            let analytic = analytic_all[c].to_f64_lossy();
            let err = relative_error(analytic, numeric, opts.abs_floor);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = c;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}
