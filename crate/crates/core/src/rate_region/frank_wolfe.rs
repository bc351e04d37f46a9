//! Pairwise conditional-gradient iterations over a polytope that is only
//! reachable through a linear maximization oracle.
//!
//! Keeping the active vertex set lets weight move directly from the worst
//! active vertex to the oracle vertex, which gives linear convergence on
//! polytopes instead of the zig-zagging of the plain method.

pub(crate) trait SmoothObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Minimizer of `value(x + t d)` over `t` in `[0, t_max]`.
    fn line_search(&self, x: &[f64], d: &[f64], t_max: f64) -> f64;
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub(crate) struct ActiveSet {
    pub vertices: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ActiveSet {
    pub fn from_vertices(vertices: Vec<Vec<f64>>) -> Self {
        let mut set = ActiveSet {
            vertices: Vec::new(),
            weights: Vec::new(),
        };
        let w = 1.0 / vertices.len() as f64;
        for v in vertices {
            set.add(v, w);
        }
        set
    }

    fn position(&self, v: &[f64]) -> Option<usize> {
        self.vertices.iter().position(|u| u.as_slice() == v)
    }

    fn add(&mut self, v: Vec<f64>, w: f64) {
        match self.position(&v) {
            Some(i) => self.weights[i] += w,
            None => {
                self.vertices.push(v);
                self.weights.push(w);
            }
        }
    }

    pub fn point(&self) -> Vec<f64> {
        let n = self.vertices.first().map_or(0, Vec::len);
        let mut x = vec![0.0; n];
        for (v, &w) in self.vertices.iter().zip(&self.weights) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += w * vi;
            }
        }
        x
    }
}

pub(crate) struct Step<'a> {
    pub x: &'a [f64],
    pub fw_vertex: &'a [f64],
    pub gap: f64,
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub active: ActiveSet,
}

/// Minimizes `obj` over the convex hull of the oracle's vertices.
///
/// `oracle(g)` returns a vertex maximizing `g . v`. `stop` sees every
/// iterate with its oracle vertex and duality gap and may end the run early.
pub(crate) fn minimize(
    obj: &impl SmoothObjective,
    oracle: impl Fn(&[f64]) -> Vec<f64>,
    start: Vec<Vec<f64>>,
    max_iter: usize,
    mut stop: impl FnMut(&Step<'_>) -> bool,
) -> Outcome {
    let mut active = ActiveSet::from_vertices(start);
    let mut x = active.point();
    let mut gap = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        let g = obj.gradient(&x);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let s = oracle(&neg);
        gap = dot(&g, &x) - dot(&g, &s);
        if stop(&Step {
            x: &x,
            fw_vertex: &s,
            gap,
        }) {
            break;
        }
        it += 1;
        // away vertex: the active vertex with the worst linearized value
        let (ai, _) = active
            .vertices
            .iter()
            .map(|v| dot(&g, v))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, val)| if val > best.1 { (i, val) } else { best });
        let d: Vec<f64> = s.iter().zip(&active.vertices[ai]).map(|(a, b)| a - b).collect();
        if d.iter().all(|v| *v == 0.0) {
            break;
        }
        let t_max = active.weights[ai];
        let t = obj.line_search(&x, &d, t_max);
        if t <= 0.0 {
            break;
        }
        if t >= t_max {
            active.vertices.swap_remove(ai);
            let w = active.weights.swap_remove(ai);
            active.add(s, w);
        } else {
            active.weights[ai] -= t;
            active.add(s, t);
        }
        // recompute from the active set to keep round-off from drifting
        x = active.point();
    }
    Outcome {
        x,
        gap,
        iterations: it,
        active,
    }
}

/// Bisection for the root of a non-decreasing derivative on `[0, t_max]`.
/// `deriv` may return `+inf` where the objective is undefined.
pub(crate) fn bisect_derivative(deriv: impl Fn(f64) -> f64, t_max: f64) -> f64 {
    if !(deriv(0.0) < 0.0) {
        return 0.0;
    }
    if deriv(t_max) <= 0.0 {
        return t_max;
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `0.5 * |x - target|^2`
pub(crate) struct SquaredDistance<'a> {
    pub target: &'a [f64],
}

impl SmoothObjective for SquaredDistance<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(self.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.target).map(|(a, b)| a - b).collect()
    }

    fn line_search(&self, x: &[f64], d: &[f64], t_max: f64) -> f64 {
        let dd = dot(d, d);
        if dd == 0.0 {
            return 0.0;
        }
        let resid: Vec<f64> = x.iter().zip(self.target).map(|(a, b)| a - b).collect();
        (-dot(d, &resid) / dd).clamp(0.0, t_max)
    }
}
