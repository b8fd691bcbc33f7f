//! Derivative-free minimization for the small (3 to 8 parameter) smooth
//! problems that show up in estimation and synthesis.
//!
//! Nelder–Mead with dimension-adaptive coefficients, optional box bounds
//! enforced by coordinate clipping, and automatic restarts around the best
//! vertex until a restart stops improving the objective.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Converged when every vertex is within `xtol` of the best one...
    pub xtol: f64,
    /// ...and the objective spread across the simplex is below `ftol`.
    pub ftol: f64,
    pub initial_step: f64,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 20_000, xtol: 1e-9, ftol: 1e-12, initial_step: 0.05, bounds: None, max_restarts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clip(x: &mut [f64], bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// One Nelder–Mead descent from `x0`.
fn descend<F: FnMut(&[f64]) -> f64>(
    f: &mut Counter<F>,
    x0: &[f64],
    step: f64,
    opts: &NelderMeadOptions,
    budget: usize,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let bounds = opts.bounds.as_deref();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clip(&mut start, bounds);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step;
        if let Some(b) = bounds {
            if v[i] > b[i].1 {
                v[i] = start[i] - step;
            }
        }
        clip(&mut v, bounds);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f.eval(v)).collect();
    let stop_at = f.evals + budget;

    loop {
        // Stable sort keeps the earlier vertex first on ties.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = &simplex[0];
        let xspread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let fspread = values[n] - values[0];
        if xspread < opts.xtol && fspread < opts.ftol {
            return (simplex[0].clone(), values[0], true);
        }
        if f.evals >= stop_at {
            return (simplex[0].clone(), values[0], false);
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / nf).collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            clip(&mut p, bounds);
            p
        };

        let xr = along(alpha);
        let fr = f.eval(&xr);
        if fr < values[0] {
            let xe = along(gamma);
            let fe = f.eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(rho * alpha);
            let fc = f.eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = f.eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            let mut v: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            clip(&mut v, bounds);
            values[i] = f.eval(&v);
            simplex[i] = v;
        }
    }
}

/// Minimizes `f` from `x0`, restarting around the incumbent until a restart
/// no longer lowers the objective by more than `ftol`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    assert!(!x0.is_empty(), "nelder_mead needs at least one parameter");
    let mut counter = Counter { f, evals: 0 };
    let (mut x, mut value, mut converged) = descend(&mut counter, x0, opts.initial_step, opts, opts.max_evals);
    let mut step = opts.initial_step;
    for _ in 0..opts.max_restarts {
        if counter.evals >= opts.max_evals {
            break;
        }
        step = (step * 0.1).max(100.0 * opts.xtol);
        let budget = opts.max_evals - counter.evals;
        let (x2, v2, c2) = descend(&mut counter, &x, step, opts, budget);
        let improved = v2 < value - opts.ftol;
        if v2 <= value {
            x = x2;
            value = v2;
            converged = c2;
        }
        if !improved {
            break;
        }
    }
    Minimum { x, value, evals: counter.evals, converged }
}

/// Runs [`nelder_mead`] from every start and keeps the lowest objective; ties
/// go to the earliest start. Returns the winning start index too.
pub fn multistart<F: Fn(&[f64]) -> f64>(f: F, starts: &[Vec<f64>], opts: &NelderMeadOptions) -> (Minimum, usize) {
    assert!(!starts.is_empty(), "multistart needs at least one start");
    starts
        .iter()
        .enumerate()
        .map(|(i, s)| (nelder_mead(&f, s, opts), i))
        .reduce(|best, cand| if cand.0.value < best.0.value { cand } else { best })
        .expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * (x[2] - 0.3).powi(2);
        let m = nelder_mead(f, &[0.0, 0.0, 0.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.x[1], -2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.x[2], 0.3, epsilon = 1e-8);
    }

    #[test]
    fn rosenbrock_4d() {
        let opts = NelderMeadOptions { max_evals: 100_000, initial_step: 0.5, ..Default::default() };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0, -1.2, 1.0], &opts);
        for v in &m.x {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn bounds_are_respected() {
        let f = |x: &[f64]| (x[0] - 5.0).powi(2) + (x[1] + 5.0).powi(2);
        let opts = NelderMeadOptions { bounds: Some(vec![(0.0, 1.0), (0.0, 1.0)]), ..Default::default() };
        let m = nelder_mead(f, &[0.5, 0.5], &opts);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.x[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn nan_is_treated_as_worst() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.2).powi(2) };
        let m = nelder_mead(f, &[0.05], &NelderMeadOptions::default());
        assert_abs_diff_eq!(m.x[0], 0.2, epsilon = 1e-8);
    }

    #[test]
    fn multistart_picks_global_and_breaks_ties_by_index() {
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.1 * (x[0] - 1.0).powi(2);
        let (m, i) = multistart(f, &[vec![-1.5], vec![1.5]], &NelderMeadOptions::default());
        assert_eq!(i, 1);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-7);

        let g = |x: &[f64]| x[0] * x[0];
        let (_, i) = multistart(g, &[vec![0.0], vec![0.0]], &NelderMeadOptions::default());
        assert_eq!(i, 0);
    }
}
