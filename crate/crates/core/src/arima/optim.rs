//! Nelder-Mead simplex minimisation.

#[derive(Clone, Debug)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

pub(crate) struct NelderMead {
    /// Stop once the spread of objective values over the simplex drops below this.
    pub ftol: f64,
    pub max_evals: usize,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            ftol: 1e-8,
            max_evals: 4000,
            initial_step: 0.25,
        }
    }
}

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        if n == 0 {
            let value = eval(start);
            return Minimum {
                x: vec![],
                value,
                converged: true,
            };
        }

        let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
        for i in 0..n {
            let mut p = start.to_vec();
            p[i] += if p[i].abs() > 1e-3 {
                self.initial_step * p[i].signum()
            } else {
                self.initial_step
            };
            simplex.push(p);
        }
        let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();
        let mut evals = n + 1;
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let best = values[0];
            let worst = values[n];
            let spread = if worst.is_finite() {
                worst - best
            } else {
                f64::INFINITY
            };
            if spread <= self.ftol {
                return Minimum {
                    x: simplex.swap_remove(0),
                    value: best,
                    converged: true,
                };
            }
            if evals >= self.max_evals {
                return Minimum {
                    x: simplex.swap_remove(0),
                    value: best,
                    converged: false,
                };
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(alpha);
            let fr = eval(&xr);
            evals += 1;
            if fr < values[0] {
                let xe = along(gamma);
                let fe = eval(&xe);
                evals += 1;
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
            // Outside contraction if the reflection helped at all, inside otherwise.
            let xc = if fr < values[n] { along(rho) } else { along(-rho) };
            let fc = eval(&xc);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            // Shrink towards the best vertex.
            for i in 1..=n {
                let shrunk: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, p)| b + sigma * (p - b))
                    .collect();
                values[i] = eval(&shrunk);
                simplex[i] = shrunk;
            }
            evals += n;
        }
    }
}
