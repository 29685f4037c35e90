//! Box-constrained Nelder–Mead.
//!
//! The search runs in unit-cube coordinates; every trial point is clipped
//! to the box before it is evaluated.

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn to_box(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&t, (&lo, &hi))| lo + t.clamp(0.0, 1.0) * (hi - lo))
            .collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

pub struct NelderMead {
    pub max_evaluations: usize,
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evaluations: 3000,
            tolerance: 1e-12,
            initial_step: 0.15,
        }
    }
}

impl NelderMead {
    /// Minimise `f` from `start`. Returns `None` when no evaluated point was finite.
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, start: &[f64], bounds: &Bounds) -> Option<Minimum> {
        let n = bounds.dim();
        let evaluations = std::cell::Cell::new(0usize);
        let eval = |u: &[f64]| {
            evaluations.set(evaluations.get() + 1);
            let v = f(&bounds.to_box(u));
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let u0 = bounds.to_unit(start);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(&u0);
        simplex.push((u0.clone(), v0));
        for i in 0..n {
            let mut u = u0.clone();
            // Step inwards when the start sits near the upper face.
            u[i] = if u[i] + self.initial_step <= 1.0 {
                u[i] + self.initial_step
            } else {
                u[i] - self.initial_step
            };
            let v = eval(&u);
            simplex.push((u, v));
        }
        let clip = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|t| t.clamp(0.0, 1.0)).collect() };

        while evaluations.get() < self.max_evaluations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            if best.is_finite() && (worst - best).abs() <= self.tolerance * (1.0 + best.abs()) {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|d| simplex[..n].iter().map(|(u, _)| u[d]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                clip(
                    centroid
                        .iter()
                        .zip(&simplex[n].0)
                        .map(|(c, w)| c + t * (w - c))
                        .collect(),
                )
            };
            let reflected = along(-1.0);
            let fr = eval(&reflected);
            if fr < simplex[0].1 {
                let expanded = along(-2.0);
                let fe = eval(&expanded);
                simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
            } else {
                let (contracted, fc) = if fr < simplex[n].1 {
                    let c = along(-0.5);
                    let v = eval(&c);
                    (c, v)
                } else {
                    let c = along(0.5);
                    let v = eval(&c);
                    (c, v)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (contracted, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let u: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, v)| a + 0.5 * (v - a)).collect();
                        let v = eval(&u);
                        *vertex = (u, v);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (u, value) = simplex.swap_remove(0);
        value.is_finite().then(|| Minimum {
            x: bounds.to_box(&u),
            value,
        })
    }
}
