//! Derivative-free Nelder-Mead simplex search, plus the wrapper that tunes
//! CDI^s exponents against cohort-mean delineation AUC.
//!
//! The optimizer minimizes; AUC maximization is wrapped by negation. Box
//! constraints are enforced by projecting every trial point onto the box
//! before evaluation, so the objective only ever sees feasible points.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cdis::CdisConfig;
use crate::error::{CdisError, Result};
use crate::metrics::{cohort_mean_auc_with, AucOptions, DelineationCase};

/// Per-coordinate box constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum Bounds {
    /// The same [lo, hi] interval on every coordinate.
    Uniform(f64, f64),
    /// One [lo, hi] interval per coordinate.
    PerAxis(Vec<(f64, f64)>),
}

impl Bounds {
    fn for_dim(&self, dim: usize) -> Result<Vec<(f64, f64)>> {
        let intervals = match self {
            Bounds::Uniform(lo, hi) => vec![(*lo, *hi); dim],
            Bounds::PerAxis(v) => {
                if v.len() != dim {
                    return Err(CdisError::InvalidParameter(format!(
                        "{} bound intervals for dimension {dim}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        for &(lo, hi) in &intervals {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CdisError::InvalidParameter(format!(
                    "bounds need finite lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(intervals)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    /// Reflection coefficient alpha (> 0).
    pub reflection: f64,
    /// Expansion coefficient gamma (> 1).
    pub expansion: f64,
    /// Contraction coefficient beta, in (0, 1).
    pub contraction: f64,
    /// Shrink coefficient delta, in (0, 1).
    pub shrink: f64,
    /// Offset of the initial simplex along each axis.
    pub initial_step: f64,
    /// Objective-evaluation budget for the main loop; the initial simplex
    /// (dim + 1 evaluations) is counted on top.
    pub max_evals: usize,
    /// Stop when the simplex f-spread falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    pub bounds: Bounds,
    /// Seeds the perturbed starting points when `restarts > 0`.
    pub seed: u64,
    /// Extra seeded multi-start runs; useful on the plateaus of rank-based
    /// objectives. 0 means a single run from x0.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.25,
            max_evals: 2000,
            f_tol: 1e-6,
            x_tol: 1e-6,
            bounds: Bounds::Uniform(-5.0, 5.0),
            seed: 0,
            restarts: 0,
        }
    }
}

impl SimplexOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.initial_step > 0.0
            && self.max_evals >= 1
            && self.f_tol >= 0.0
            && self.x_tol >= 0.0;
        if !ok {
            return Err(CdisError::InvalidParameter(format!(
                "simplex coefficients out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Why the search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    FTol,
    XTol,
    MaxEvals,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    /// Total objective evaluations, initial simplex included.
    pub evals: usize,
    /// (evaluation index, objective) at each best-so-far improvement;
    /// objective values are non-increasing along the trace.
    pub trace: Vec<(usize, f64)>,
    pub termination: Termination,
}

struct Vertex {
    x: Vec<f64>,
    f: f64,
    age: u64,
}

struct Evaluator<F> {
    objective: F,
    evals: usize,
    trace: Vec<(usize, f64)>,
    best_f: f64,
    best_x: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Evaluator<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        let f = (self.objective)(x)?;
        self.evals += 1;
        if !f.is_finite() {
            return Err(CdisError::Objective {
                point: x.to_vec(),
                reason: format!("objective returned {f}"),
            });
        }
        if f < self.best_f {
            self.best_f = f;
            self.best_x = x.to_vec();
            self.trace.push((self.evals, f));
        }
        Ok(f)
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `objective` with the standard Nelder-Mead loop (order,
/// reflect, expand, contract outside/inside, shrink). Deterministic given
/// identical inputs: ties in the simplex ordering break by vertex age.
pub fn nelder_mead<F>(mut objective: F, x0: &[f64], opts: &SimplexOptions) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    opts.validate()?;
    let dim = x0.len();
    if dim == 0 {
        return Err(CdisError::InvalidParameter(
            "optimization needs at least one coordinate".into(),
        ));
    }
    let bounds = opts.bounds.for_dim(dim)?;

    if opts.restarts == 0 {
        return nelder_mead_single(&mut objective, x0, opts, &bounds);
    }

    // Seeded multi-start: run from x0 and from perturbed copies, keep the
    // best run. Reported evals are the total across runs.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<OptResult> = None;
    let mut total_evals = 0;
    for run in 0..=opts.restarts {
        let mut start = x0.to_vec();
        if run > 0 {
            for v in &mut start {
                *v += rng.gen_range(-2.0 * opts.initial_step..=2.0 * opts.initial_step);
            }
            project(&mut start, &bounds);
        }
        let result = nelder_mead_single(&mut objective, &start, opts, &bounds)?;
        total_evals += result.evals;
        if best.as_ref().is_none_or(|b| result.best_f < b.best_f) {
            best = Some(result);
        }
    }
    let mut best = best.expect("at least one run");
    best.evals = total_evals;
    Ok(best)
}

fn nelder_mead_single<F>(
    objective: &mut F,
    x0: &[f64],
    opts: &SimplexOptions,
    bounds: &[(f64, f64)],
) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let dim = x0.len();
    let mut ev = Evaluator {
        objective,
        evals: 0,
        trace: Vec::new(),
        best_f: f64::INFINITY,
        best_x: x0.to_vec(),
    };

    // Initial simplex: projected x0 plus one vertex offset per axis. The
    // offset flips sign when it would clamp onto the upper bound.
    let mut origin = x0.to_vec();
    project(&mut origin, bounds);
    let mut simplex = Vec::with_capacity(dim + 1);
    let f0 = ev.eval(&origin)?;
    simplex.push(Vertex {
        x: origin.clone(),
        f: f0,
        age: 0,
    });
    for i in 0..dim {
        let mut x = origin.clone();
        if x[i] + opts.initial_step <= bounds[i].1 {
            x[i] += opts.initial_step;
        } else {
            x[i] -= opts.initial_step;
        }
        project(&mut x, bounds);
        let f = ev.eval(&x)?;
        simplex.push(Vertex {
            x,
            f,
            age: (i + 1) as u64,
        });
    }
    let mut next_age = (dim + 1) as u64;

    let termination = loop {
        simplex.sort_by(|a, b| {
            a.f.partial_cmp(&b.f)
                .expect("objective values are finite")
                .then(a.age.cmp(&b.age))
        });

        let spread = simplex[dim].f - simplex[0].f;
        if spread < opts.f_tol {
            break Termination::FTol;
        }
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| {
                v.x.iter()
                    .zip(&simplex[0].x)
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0f64, f64::max);
        if diameter < opts.x_tol {
            break Termination::XTol;
        }
        if ev.evals >= opts.max_evals {
            break Termination::MaxEvals;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for v in &simplex[..dim] {
            for (c, &xi) in centroid.iter_mut().zip(&v.x) {
                *c += xi;
            }
        }
        for c in &mut centroid {
            *c /= dim as f64;
        }

        let worst = &simplex[dim];
        let mut reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst.x)
            .map(|(c, w)| c + opts.reflection * (c - w))
            .collect();
        project(&mut reflected, bounds);
        let f_reflected = ev.eval(&reflected)?;

        let replacement = if f_reflected < simplex[0].f {
            let mut expanded: Vec<f64> = centroid
                .iter()
                .zip(&reflected)
                .map(|(c, r)| c + opts.expansion * (r - c))
                .collect();
            project(&mut expanded, bounds);
            let f_expanded = ev.eval(&expanded)?;
            if f_expanded < f_reflected {
                Some((expanded, f_expanded))
            } else {
                Some((reflected, f_reflected))
            }
        } else if f_reflected < simplex[dim - 1].f {
            Some((reflected, f_reflected))
        } else if f_reflected < worst.f {
            // Outside contraction, between centroid and the reflection.
            let mut contracted: Vec<f64> = centroid
                .iter()
                .zip(&reflected)
                .map(|(c, r)| c + opts.contraction * (r - c))
                .collect();
            project(&mut contracted, bounds);
            let f_contracted = ev.eval(&contracted)?;
            (f_contracted <= f_reflected).then_some((contracted, f_contracted))
        } else {
            // Inside contraction, between centroid and the worst vertex.
            let contracted: Vec<f64> = centroid
                .iter()
                .zip(&worst.x)
                .map(|(c, w)| c + opts.contraction * (w - c))
                .collect();
            let f_contracted = ev.eval(&contracted)?;
            (f_contracted < worst.f).then_some((contracted, f_contracted))
        };

        match replacement {
            Some((x, f)) => {
                simplex[dim] = Vertex {
                    x,
                    f,
                    age: next_age,
                };
                next_age += 1;
            }
            None => {
                // Shrink everything toward the best vertex.
                let best = simplex[0].x.clone();
                for v in &mut simplex[1..] {
                    for (xi, &bi) in v.x.iter_mut().zip(&best) {
                        *xi = bi + opts.shrink * (*xi - bi);
                    }
                    v.f = ev.eval(&v.x)?;
                    v.age = next_age;
                    next_age += 1;
                }
            }
        }
    };

    Ok(OptResult {
        best_x: ev.best_x,
        best_f: ev.best_f,
        evals: ev.evals,
        trace: ev.trace,
        termination,
    })
}

/// Tunes the config's exponent vector to maximize cohort-mean delineation
/// AUC, starting from the config's own exponents. The returned config never
/// scores below the starting one: the incumbent wins ties and regressions.
pub fn optimize_cdis_coefficients(
    cases: &[DelineationCase],
    base_config: &CdisConfig,
    opts: &SimplexOptions,
) -> Result<(CdisConfig, OptResult)> {
    optimize_cdis_coefficients_with(cases, base_config, opts, &AucOptions::default())
}

pub fn optimize_cdis_coefficients_with(
    cases: &[DelineationCase],
    base_config: &CdisConfig,
    opts: &SimplexOptions,
    auc_opts: &AucOptions,
) -> Result<(CdisConfig, OptResult)> {
    base_config.validate()?;
    let initial_auc = cohort_mean_auc_with(cases, base_config, auc_opts)?;

    let objective = |rho: &[f64]| -> Result<f64> {
        let config = base_config.with_exponents(rho.to_vec())?;
        let mean_auc = cohort_mean_auc_with(cases, &config, auc_opts).map_err(|e| {
            CdisError::Objective {
                point: rho.to_vec(),
                reason: e.to_string(),
            }
        })?;
        Ok(-mean_auc)
    };

    let mut result = nelder_mead(objective, &base_config.exponents, opts)?;
    if -result.best_f < initial_auc {
        // Possible when x0 had to be projected onto the box; keep the
        // incumbent exponents.
        result.best_x = base_config.exponents.clone();
        result.best_f = -initial_auc;
    }
    let optimized = base_config.with_exponents(result.best_x.clone())?;
    Ok((optimized, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdis::CalibrationSpec;
    use crate::diffusion::DwiSeries;
    use crate::metrics::cohort_mean_auc;
    use crate::volume::{Dims, Mask3D, Volume3D};

    fn ok<F: Fn(&[f64]) -> f64>(f: F) -> impl FnMut(&[f64]) -> crate::error::Result<f64> {
        move |x| Ok(f(x))
    }

    #[test]
    fn shifted_quadratic_converges_to_known_minimum() {
        let result = nelder_mead(
            ok(|x| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)),
            &[0.0, 0.0],
            &SimplexOptions::default(),
        )
        .unwrap();
        assert!(result.best_f < 1e-6, "f = {}", result.best_f);
        assert!((result.best_x[0] - 3.0).abs() < 1e-4);
        assert!((result.best_x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn starting_at_the_optimum_terminates_immediately() {
        let result = nelder_mead(ok(|x| x[0] * x[0]), &[0.0], &SimplexOptions::default()).unwrap();
        assert_eq!(result.best_f, 0.0);
        assert_eq!(result.termination, Termination::FTol);
        assert!(result.evals < 60, "evals = {}", result.evals);
    }

    #[test]
    fn rosenbrock_reaches_global_minimum() {
        let rosenbrock =
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let result =
            nelder_mead(ok(rosenbrock), &[-1.2, 1.0], &SimplexOptions::default()).unwrap();
        assert!(result.best_f < 1e-6, "f = {}", result.best_f);
        assert!((result.best_x[0] - 1.0).abs() < 1e-3);
        assert!((result.best_x[1] - 1.0).abs() < 1e-3);
        assert!(result.evals <= 2000 + 3);
    }

    #[test]
    fn budget_is_respected_including_initial_simplex() {
        let opts = SimplexOptions {
            max_evals: 10,
            f_tol: 0.0,
            x_tol: 0.0,
            ..SimplexOptions::default()
        };
        let result = nelder_mead(
            ok(|x| x.iter().map(|v| v * v).sum()),
            &[2.0, 2.0, 2.0],
            &opts,
        )
        .unwrap();
        assert_eq!(result.termination, Termination::MaxEvals);
        assert!(result.evals <= 10 + 4, "evals = {}", result.evals);
    }

    #[test]
    fn flat_objective_terminates_on_simplex_diameter() {
        let opts = SimplexOptions {
            f_tol: 0.0,
            ..SimplexOptions::default()
        };
        let result = nelder_mead(ok(|_| 1.0), &[0.5, 0.5], &opts).unwrap();
        assert_eq!(result.termination, Termination::XTol);
    }

    #[test]
    fn identical_runs_are_identical() {
        let f = |x: &[f64]| (x[0] - 0.7).powi(2) + (x[1] * x[1] - 0.3).powi(2);
        let a = nelder_mead(ok(f), &[2.0, -2.0], &SimplexOptions::default()).unwrap();
        let b = nelder_mead(ok(f), &[2.0, -2.0], &SimplexOptions::default()).unwrap();
        assert_eq!(a.best_x, b.best_x);
        assert_eq!(a.best_f, b.best_f);
        assert_eq!(a.evals, b.evals);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn trace_is_non_increasing_and_best_is_consistent() {
        let f = |x: &[f64]| (x[0] + 2.0).powi(2) * (1.0 + 0.1 * (x[0] * 5.0).sin());
        let result = nelder_mead(ok(f), &[3.0], &SimplexOptions::default()).unwrap();
        for w in result.trace.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        assert_eq!(result.trace.last().unwrap().1, result.best_f);
        assert_eq!(f(&result.best_x), result.best_f);
    }

    #[test]
    fn every_evaluated_point_stays_in_the_box() {
        let bounds = Bounds::Uniform(-1.0, 1.0);
        let opts = SimplexOptions {
            bounds: bounds.clone(),
            ..SimplexOptions::default()
        };
        let result = nelder_mead(
            |x: &[f64]| {
                assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)), "escaped: {x:?}");
                Ok((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2))
            },
            &[0.0, 0.0],
            &opts,
        )
        .unwrap();
        // The unconstrained minimum (3, -1) projects to the box corner.
        assert!((result.best_x[0] - 1.0).abs() < 1e-4);
        assert!((result.best_x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn non_finite_objective_reports_the_point() {
        let err = nelder_mead(
            ok(|x| if x[0] > 0.1 { f64::NAN } else { x[0] }),
            &[0.0],
            &SimplexOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CdisError::Objective { .. }));
    }

    #[test]
    fn option_validation_rejects_bad_coefficients() {
        let bad = SimplexOptions {
            expansion: 0.9,
            ..SimplexOptions::default()
        };
        assert!(nelder_mead(ok(|x| x[0]), &[0.0], &bad).is_err());
        let bad_bounds = SimplexOptions {
            bounds: Bounds::PerAxis(vec![(1.0, 1.0)]),
            ..SimplexOptions::default()
        };
        assert!(nelder_mead(ok(|x| x[0]), &[0.0], &bad_bounds).is_err());
    }

    #[test]
    fn multi_start_finds_the_better_basin() {
        // Two basins; the deeper one is away from x0.
        let f = |x: &[f64]| {
            let a = (x[0] + 2.0).powi(2) + 0.5;
            let b = (x[0] - 2.0).powi(2);
            a.min(b)
        };
        let single = nelder_mead(ok(f), &[-2.0], &SimplexOptions::default()).unwrap();
        assert!((single.best_f - 0.5).abs() < 1e-6);
        let multi = nelder_mead(
            ok(f),
            &[-2.0],
            &SimplexOptions {
                restarts: 8,
                initial_step: 1.5,
                seed: 3,
                ..SimplexOptions::default()
            },
        )
        .unwrap();
        assert!(multi.best_f < 0.5);
    }

    /// Two-signal phantom where only the second channel separates tumor
    /// from background.
    fn informative_channel_cohort() -> Vec<DelineationCase> {
        let d = Dims::new(6, 6, 3).unwrap();
        (0..3)
            .map(|p| {
                let labels: Vec<u8> = (0..d.len()).map(|i| ((i + p) % 5 == 0) as u8).collect();
                let noise = |i: usize, k: usize| {
                    0.35 * ((i * 31 + k * 17 + p * 101) as f64).sin()
                };
                let ch0: Vec<f64> = (0..d.len()).map(|i| 2.0 + noise(i, 0)).collect();
                let ch1: Vec<f64> = (0..d.len())
                    .map(|i| {
                        let signal = if labels[i] == 1 { 1.6 } else { 1.0 };
                        signal + noise(i, 1)
                    })
                    .collect();
                DelineationCase {
                    id: format!("p{p}"),
                    series: DwiSeries::new(
                        vec![0.0, 800.0],
                        vec![
                            Volume3D::from_vec(d, ch0).unwrap(),
                            Volume3D::from_vec(d, ch1).unwrap(),
                        ],
                    )
                    .unwrap(),
                    tumor: Mask3D::from_vec(d, labels).unwrap(),
                    roi: None,
                }
            })
            .collect()
    }

    #[test]
    fn tuning_amplifies_the_informative_channel() {
        let cases = informative_channel_cohort();
        let base =
            CdisConfig::unit(vec![0.0, 800.0], vec![], CalibrationSpec::full_range()).unwrap();
        let initial = cohort_mean_auc(&cases, &base).unwrap();
        assert!(initial < 1.0);

        let (optimized, result) =
            optimize_cdis_coefficients(&cases, &base, &SimplexOptions::default()).unwrap();
        let achieved = -result.best_f;
        assert!(achieved >= initial, "{achieved} < {initial}");
        let final_auc = cohort_mean_auc(&cases, &optimized).unwrap();
        assert!((final_auc - achieved).abs() <= 1e-12);
        // Channel 1 carries the contrast; its exponent should outgrow the
        // uninformative channel 0 in magnitude.
        assert!(optimized.exponents[1].abs() > optimized.exponents[0].abs());
    }

    #[test]
    fn already_perfect_cohort_never_degrades() {
        let d = Dims::new(4, 4, 2).unwrap();
        let labels: Vec<u8> = (0..d.len()).map(|i| (i % 4 == 0) as u8).collect();
        let perfect: Vec<f64> = labels.iter().map(|&l| 1.0 + l as f64).collect();
        let flat = vec![1.0; d.len()];
        let case = DelineationCase {
            id: "perfect".into(),
            series: DwiSeries::new(
                vec![0.0, 800.0],
                vec![
                    Volume3D::from_vec(d, flat).unwrap(),
                    Volume3D::from_vec(d, perfect).unwrap(),
                ],
            )
            .unwrap(),
            tumor: Mask3D::from_vec(d, labels).unwrap(),
            roi: None,
        };
        let base =
            CdisConfig::unit(vec![0.0, 800.0], vec![], CalibrationSpec::full_range()).unwrap();
        assert_eq!(cohort_mean_auc(&[case.clone()], &base).unwrap(), 1.0);

        let (optimized, result) =
            optimize_cdis_coefficients(&[case.clone()], &base, &SimplexOptions::default())
                .unwrap();
        assert_eq!(-result.best_f, 1.0);
        assert_eq!(cohort_mean_auc(&[case], &optimized).unwrap(), 1.0);
    }
}
