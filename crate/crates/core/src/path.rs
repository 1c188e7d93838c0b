//! Continuous paths handed to drivers and terminal functionals.
//!
//! Both interpolations of the walk (linear and shifted) are piecewise linear
//! with knots on the time grid, so a path is fully described by its knot
//! values. Distances between such paths are attained at the knots.

/// Borrowed piecewise-linear path: knot `j` sits at `times[j]` and holds a
/// `dim`-vector.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    times: &'a [f64],
    knots: &'a [f64],
    dim: usize,
}

impl<'a> PathView<'a> {
    pub fn new(times: &'a [f64], knots: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0, "path dimension must be positive");
        assert_eq!(
            knots.len(),
            times.len() * dim,
            "knot buffer does not match the time points"
        );
        Self { times, knots, dim }
    }

    /// Path with no knots, used where a driver is declared path-independent.
    pub fn empty(dim: usize) -> Self {
        Self {
            times: &[],
            knots: &[],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &'a [f64] {
        self.times
    }

    pub fn knots(&self) -> &'a [f64] {
        self.knots
    }

    pub fn knot(&self, j: usize) -> &'a [f64] {
        &self.knots[j * self.dim..(j + 1) * self.dim]
    }

    pub fn last(&self) -> Option<&'a [f64]> {
        (!self.is_empty()).then(|| self.knot(self.len() - 1))
    }

    /// Value at time `t`, clamped to the knot range. Zero for an empty path.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.is_empty() {
            return out;
        }
        let n = self.len();
        if t <= self.times[0] {
            out.copy_from_slice(self.knot(0));
            return out;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(self.knot(n - 1));
            return out;
        }
        // first knot strictly after t
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let lambda = (t - t0) / (t1 - t0);
        let (a, b) = (self.knot(j - 1), self.knot(j));
        for k in 0..self.dim {
            out[k] = a[k] + lambda * (b[k] - a[k]);
        }
        out
    }

    /// `sup_{s <= t} |w(s)|` with the Euclidean norm.
    pub fn sup_norm_until(&self, t: f64) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.len() {
            if self.times[j] > t {
                best = best.max(norm(&self.value_at(t)));
                return best;
            }
            best = best.max(norm(self.knot(j)));
        }
        best
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.len()).map(|j| norm(self.knot(j))).fold(0.0, f64::max)
    }
}

/// Owned counterpart of [`PathView`].
#[derive(Clone, Debug, PartialEq)]
pub struct OwnedPath {
    pub times: Vec<f64>,
    pub knots: Vec<f64>,
    pub dim: usize,
}

impl OwnedPath {
    pub fn view(&self) -> PathView<'_> {
        PathView::new(&self.times, &self.knots, self.dim)
    }

    /// The same path translated by the constant vector `shift`.
    pub fn shifted(&self, shift: &[f64]) -> OwnedPath {
        let mut knots = self.knots.clone();
        for chunk in knots.chunks_mut(self.dim) {
            for (x, c) in chunk.iter_mut().zip(shift) {
                *x += c;
            }
        }
        OwnedPath {
            times: self.times.clone(),
            knots,
            dim: self.dim,
        }
    }
}

impl From<PathView<'_>> for OwnedPath {
    fn from(v: PathView<'_>) -> Self {
        OwnedPath {
            times: v.times.to_vec(),
            knots: v.knots.to_vec(),
            dim: v.dim,
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sup_{s <= t} |a(s) - b(s)|` for two paths on the same knots.
pub fn sup_distance_until(a: &PathView<'_>, b: &PathView<'_>, t: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut best = 0.0f64;
    for j in 0..a.len() {
        if a.times[j] > t {
            let (va, vb) = (a.value_at(t), b.value_at(t));
            let diff: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
            return best.max(norm(&diff));
        }
        let diff: Vec<f64> = a.knot(j).iter().zip(b.knot(j)).map(|(x, y)| x - y).collect();
        best = best.max(norm(&diff));
    }
    best
}

/// Sup-norm distance over the whole common knot range.
pub fn sup_distance(a: &PathView<'_>, b: &PathView<'_>) -> f64 {
    sup_distance_until(a, b, f64::INFINITY)
}
