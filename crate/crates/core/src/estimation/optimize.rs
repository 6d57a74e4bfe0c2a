//! Unconstrained minimizers used on transformed parameters.

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// Stopping criterion met (as opposed to running out of budget).
    pub converged: bool,
    /// Infinity norm of the gradient at `x`, if gradients were used.
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NelderMeadOptions {
    pub step: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            ftol: 1e-10,
            xtol: 1e-8,
            max_evals: 20_000,
        }
    }
}

/// Nelder-Mead simplex with reflection 1, expansion 2, contraction 1/2 and
/// shrink 1/2. Non-finite values are treated as `+inf`.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evals = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.ftol * (best.abs() + opts.ftol) || spread <= opts.xtol {
            converged = best.is_finite();
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let xs: Vec<f64> = x_best
                .iter()
                .zip(&item.0)
                .map(|(b, x)| b + 0.5 * (x - b))
                .collect();
            let fs = eval(&xs, &mut evals);
            *item = (xs, fs);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum {
        x,
        f: fx,
        evals,
        converged,
        grad_norm: None,
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-6,
            max_iter: 500,
        }
    }
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking. `fg` returns the value and gradient.
///
/// Converges when the gradient infinity norm drops to `gtol`. Near the
/// optimum the objective stops decreasing in floating point before the
/// gradient is small, so a step that leaves the value unchanged to within
/// rounding but shrinks the gradient is also taken.
pub(crate) fn bfgs<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    mut fg: F,
    x0: &[f64],
    opts: BfgsOptions,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut evals = 1;
    let identity = |scale: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect()
    };
    let mut h = identity(1.0);
    let mut fresh = true;
    let mut converged = false;
    if !f.is_finite() {
        return Minimum {
            x,
            f,
            evals,
            converged: false,
            grad_norm: None,
        };
    }
    for _ in 0..opts.max_iter {
        let gn = inf_norm(&g);
        if gn <= opts.gtol {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            h = identity(1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        // Keep the first step of a fresh metric modest.
        if fresh {
            let dn = inf_norm(&d);
            if dn > 1.0 {
                for di in &mut d {
                    *di /= dn;
                }
                slope /= dn;
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (fnew, gnew) = fg(&xn);
            evals += 1;
            if fnew.is_finite() {
                let armijo = fnew <= f + 1e-4 * t * slope;
                let flat = fnew <= f + 4.0 * f64::EPSILON * f.abs() && inf_norm(&gnew) < gn;
                if armijo || flat {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if fresh {
                break;
            }
            h = identity(1.0);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                // Scale the initial metric by the observed curvature.
                let scale = sy / dot(&y, &y);
                h = identity(scale);
            }
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        x = xn;
        f = fnew;
        g = gnew;
    }
    let gn = inf_norm(&g);
    Minimum {
        x,
        f,
        evals,
        converged: converged || gn <= opts.gtol,
        grad_norm: Some(gn),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> (f64, Vec<f64>) {
        let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        let g1 = 200.0 * (x[1] - x[0] * x[0]);
        (rosenbrock(x), vec![g0, g1])
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn bfgs_reaches_gradient_tolerance() {
        let m = bfgs(rosenbrock_grad, &[-1.2, 1.0], BfgsOptions::default());
        assert!(m.converged);
        assert!(m.grad_norm.unwrap() <= 1e-6);
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infinite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(f, &[0.1], NelderMeadOptions::default());
        assert!((m.x[0] - 2.0).abs() < 1e-4);
    }
}
