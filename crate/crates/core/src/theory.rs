//! Misclassification rate of two 1-D Gaussian classes before and after
//! mean aggregation over a regular graph.
//!
//! The error `ε` is the overlap area `∫ min(f1, f2) dx`: 1.0 for identical
//! classes, 0.0 for perfectly separated ones. The optimal classifier on a
//! balanced sample errs on `ε / 2` of it.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::rng::{stream_rng, Stream};
use crate::synth::{gen_gaussian_regular, mean_aggregate, GaussianClassSpec, SynthError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("standard deviations must be positive (got {0}, {1})")]
    NonPositiveSigma(f64, f64),
    #[error("invalid homophily grid: {0}")]
    BadGrid(String),
    #[error("need at least one sample per class")]
    NoSamples,
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// Standard normal CDF.
pub fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 − Φ(z)`, accurate for large `z`.
pub fn phi_upper(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `P(a < X < b)` for `X ~ N(mu, sigma²)`, evaluated on whichever tail
/// keeps the difference well conditioned.
fn interval_mass(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let za = (a - mu) / sigma;
    let zb = (b - mu) / sigma;
    if za > 0.0 {
        phi_upper(za) - phi_upper(zb)
    } else {
        phi(zb) - phi(za)
    }
}

fn log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln()
}

/// Points where the two densities are equal, ascending.
fn crossings(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Vec<f64> {
    let (v1, v2) = (s1 * s1, s2 * s2);
    let a = 0.5 / v1 - 0.5 / v2;
    let b = mu2 / v2 - mu1 / v1;
    let c = 0.5 * mu1 * mu1 / v1 - 0.5 * mu2 * mu2 / v2 + (s1 / s2).ln();
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    };
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

/// Overlap `∫ min(f1, f2) dx` of `N(mu1, sig1²)` and `N(mu2, sig2²)`.
pub fn bayes_error(mu1: f64, sig1: f64, mu2: f64, sig2: f64) -> Result<f64> {
    if !(sig1 > 0.0 && sig2 > 0.0) {
        return Err(TheoryError::NonPositiveSigma(sig1, sig2));
    }
    let ((mu1, sig1), (mu2, sig2)) = if mu1 <= mu2 {
        ((mu1, sig1), (mu2, sig2))
    } else {
        ((mu2, sig2), (mu1, sig1))
    };
    if mu1 == mu2 && sig1 == sig2 {
        return Ok(1.0);
    }
    let mut cuts = vec![f64::NEG_INFINITY];
    cuts.extend(crossings(mu1, sig1, mu2, sig2));
    cuts.push(f64::INFINITY);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let probe = match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (false, true) => b - 1.0,
            (true, false) => a + 1.0,
            (false, false) => mu1,
        };
        // the lower density on this interval contributes its mass
        total += if log_density(probe, mu1, sig1) <= log_density(probe, mu2, sig2) {
            interval_mass(mu1, sig1, a, b)
        } else {
            interval_mass(mu2, sig2, a, b)
        };
    }
    Ok(total.clamp(0.0, 1.0))
}

/// `(mean, variance)` of one class after averaging over `d` neighbors of
/// which a fraction `h` share the class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
}

pub fn aggregated_params(mu1: f64, sig1: f64, mu2: f64, sig2: f64, h: f64, d: usize) -> (MeanVar, MeanVar) {
    let d = d as f64;
    let (v1, v2) = (sig1 * sig1, sig2 * sig2);
    (
        MeanVar {
            mean: h * mu1 + (1.0 - h) * mu2,
            var: (h * v1 + (1.0 - h) * v2) / d,
        },
        MeanVar {
            mean: h * mu2 + (1.0 - h) * mu1,
            var: (h * v2 + (1.0 - h) * v1) / d,
        },
    )
}

fn aggregated_error(spec: &GaussianClassSpec, h: f64) -> Result<f64> {
    let (c1, c2) = aggregated_params(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2, h, spec.degree);
    bayes_error(c1.mean, c1.var.sqrt(), c2.mean, c2.var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCurve {
    pub grid: Vec<f64>,
    pub eps_raw: f64,
    pub eps_agg: Vec<f64>,
    /// Crossing of `eps_agg` with `eps_raw` in `(0, 0.5)`.
    pub h_lower: Option<f64>,
    /// Crossing in `(0.5, 1)`.
    pub h_upper: Option<f64>,
}

impl EpsilonCurve {
    /// Rows of `(h, eps_agg, eps_raw)`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.grid.iter().zip(&self.eps_agg).map(move |(&h, &e)| (h, e, self.eps_raw))
    }

    pub fn crossing_interval(&self) -> Option<(f64, f64)> {
        self.h_lower.zip(self.h_upper)
    }
}

/// `0.0, 0.1, …, 1.0` (or any step count), computed without accumulation drift.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

const BISECTION_TOL: f64 = 1e-6;

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> Result<f64>) -> Result<Option<f64>> {
    // only a strict sign change counts: touching zero at an end is not a crossing
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo * fhi >= 0.0 {
        return Ok(None);
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(Some(mid));
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Aggregated error over `grid` against the raw error, with the
/// homophily values where aggregation stops helping.
pub fn epsilon_curve(spec: &GaussianClassSpec, grid: &[f64]) -> Result<EpsilonCurve> {
    if spec.degree == 0 {
        return Err(TheoryError::BadGrid("degree must be >= 1".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|h| !(0.0..=1.0).contains(h)) {
        return Err(TheoryError::BadGrid("grid must be strictly ascending within [0, 1]".into()));
    }
    let eps_raw = bayes_error(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2)?;
    let eps_agg = grid.iter().map(|&h| aggregated_error(spec, h)).collect::<Result<Vec<_>>>()?;
    let gap = |h: f64| Ok(aggregated_error(spec, h)? - eps_raw);
    Ok(EpsilonCurve {
        grid: grid.to_vec(),
        eps_raw,
        eps_agg,
        h_lower: bisect(0.0, 0.5, gap)?,
        h_upper: bisect(0.5, 1.0, gap)?,
    })
}

/// What the Monte-Carlo estimate samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McSource {
    /// Raw class features.
    Raw,
    /// Draws from the aggregated class distributions at `spec.homophily`.
    AggregatedGaussian,
    /// Neighbor means on a generated regular graph; the classifier uses the
    /// homophily the graph realizes, `round(h·d) / d`.
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Estimate of `ε` on the overlap scale (twice the balanced error rate).
    pub eps: f64,
    pub stderr: f64,
    /// Homophily whose analytic error this estimates.
    pub homophily: f64,
}

/// Empirical error of the true-parameter Bayes rule on `n_samples` points,
/// half from each class.
pub fn monte_carlo_error(spec: &GaussianClassSpec, n_samples: usize, source: McSource, seed: u64) -> Result<McEstimate> {
    let per_class = n_samples / 2;
    if per_class == 0 {
        return Err(TheoryError::NoSamples);
    }
    if !(spec.sigma1 > 0.0 && spec.sigma2 > 0.0) {
        return Err(TheoryError::NonPositiveSigma(spec.sigma1, spec.sigma2));
    }
    let (samples1, samples2, params, h): (Vec<f64>, Vec<f64>, (MeanVar, MeanVar), f64) = match source {
        McSource::Raw | McSource::AggregatedGaussian => {
            let params = if source == McSource::Raw {
                (
                    MeanVar {
                        mean: spec.mu1,
                        var: spec.sigma1 * spec.sigma1,
                    },
                    MeanVar {
                        mean: spec.mu2,
                        var: spec.sigma2 * spec.sigma2,
                    },
                )
            } else {
                spec.validate()?;
                aggregated_params(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2, spec.homophily, spec.degree)
            };
            let mut rng = stream_rng(seed, Stream::Sampling);
            let n1 = Normal::new(params.0.mean, params.0.var.sqrt()).expect("positive variance");
            let n2 = Normal::new(params.1.mean, params.1.var.sqrt()).expect("positive variance");
            let s1 = (0..per_class).map(|_| n1.sample(&mut rng)).collect();
            let s2 = (0..per_class).map(|_| n2.sample(&mut rng)).collect();
            (s1, s2, params, spec.homophily)
        }
        McSource::Graph => {
            let g = gen_gaussian_regular(spec, 2 * per_class, seed)?;
            let agg = mean_aggregate(&g.graph, &g.features);
            let h = g.realized_homophily;
            let params = aggregated_params(spec.mu1, spec.sigma1, spec.mu2, spec.sigma2, h, spec.degree);
            let (s1, s2) = (0..2 * per_class).partition::<Vec<usize>, _>(|&v| g.labels.get(v) == 0);
            (
                s1.into_iter().map(|v| agg[(v, 0)]).collect(),
                s2.into_iter().map(|v| agg[(v, 0)]).collect(),
                params,
                h,
            )
        }
    };
    let (c1, c2) = params;
    let (sd1, sd2) = (c1.var.sqrt(), c2.var.sqrt());
    // ties go to class 1, so identical classes give err1 = 0, err2 = 1
    let says_class1 = |x: f64| log_density(x, c1.mean, sd1) >= log_density(x, c2.mean, sd2);
    let err1 = samples1.iter().filter(|&&x| !says_class1(x)).count() as f64 / samples1.len() as f64;
    let err2 = samples2.iter().filter(|&&x| says_class1(x)).count() as f64 / samples2.len() as f64;
    let stderr = (err1 * (1.0 - err1) / samples1.len() as f64 + err2 * (1.0 - err2) / samples2.len() as f64).sqrt();
    Ok(McEstimate {
        eps: err1 + err2,
        stderr,
        homophily: h,
    })
}

/// Adaptive Simpson integration of `∫ min(f1, f2) dx` over twelve standard
/// deviations beyond both means. Independent of the crossing-point algebra;
/// used to cross-check [`bayes_error`].
pub fn overlap_by_quadrature(mu1: f64, sig1: f64, mu2: f64, sig2: f64) -> f64 {
    let pdf = |x: f64, mu: f64, s: f64| {
        let z = (x - mu) / s;
        (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    };
    let f = |x: f64| pdf(x, mu1, sig1).min(pdf(x, mu2, sig2));
    let spread = 12.0 * sig1.max(sig2);
    let (lo, hi) = (mu1.min(mu2) - spread, mu1.max(mu2) + spread);
    // split into panels so narrow features are not stepped over
    let panels = 64;
    let width = (hi - lo) / panels as f64;
    (0..panels)
        .map(|i| {
            let a = lo + i as f64 * width;
            adaptive_simpson(&f, a, a + width, 1e-13, 40)
        })
        .sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}
