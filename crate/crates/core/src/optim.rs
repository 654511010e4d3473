//! Derivative-free local minimization.

/// Settings of [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when the simplex values agree to this relative tolerance.
    pub rtol: f64,
    /// Edge length of the initial simplex.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rtol: 1e-8,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex search with standard coefficients.
///
/// Non-finite objective values are treated as `+inf`. After the first
/// convergence the simplex is rebuilt around the best vertex once, which
/// guards against collapse on a ridge.
pub fn nelder_mead<F>(mut objective: F, start: &[f64], options: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let n = start.len();
    let mut best = start.to_vec();
    let mut best_value = eval(start);
    let mut iterations = 0;
    let mut converged = false;
    for _restart in 0..2 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for k in 0..n {
            let mut v = best.clone();
            v[k] += options.step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = std::iter::once(best_value)
            .chain(simplex[1..].iter().map(|v| eval(v)))
            .collect();
        converged = false;
        while iterations < options.max_iterations {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let (lo, hi) = (values[0], values[n]);
            let spread = (hi - lo).abs();
            if spread.is_finite() && spread <= options.rtol * (lo.abs() + hi.abs()).max(1e-300) {
                converged = true;
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let reflected = along(1.0);
            let fr = eval(&reflected);
            if fr < values[0] {
                let expanded = along(2.0);
                let fe = eval(&expanded);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
            } else {
                let (contracted, fc) = if fr < values[n] {
                    let c = along(0.5);
                    let fc = eval(&c);
                    (c, fc)
                } else {
                    let c = along(-0.5);
                    let fc = eval(&c);
                    (c, fc)
                };
                if fc < values[n].min(fr) {
                    simplex[n] = contracted;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        let shrunk: Vec<f64> = simplex[0]
                            .iter()
                            .zip(&simplex[i])
                            .map(|(b, v)| b + 0.5 * (v - b))
                            .collect();
                        values[i] = eval(&shrunk);
                        simplex[i] = shrunk;
                    }
                }
            }
        }
        let arg = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        if values[arg] <= best_value {
            best_value = values[arg];
            best = simplex[arg].clone();
        }
        if !converged {
            break;
        }
    }
    Minimum {
        x: best,
        value: best_value,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(
            rosen,
            &[-1.2, 1.0],
            NelderMeadOptions {
                max_iterations: 5000,
                rtol: 1e-14,
                step: 0.5,
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn infinite_regions_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(f, &[0.5], NelderMeadOptions::default());
        assert!((m.x[0] - 2.0).abs() < 1e-3);
    }
}
