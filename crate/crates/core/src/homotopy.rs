//! Exact LASSO solution path by homotopy (least-angle regression with the
//! lasso drop rule) on a precomputed Gram matrix of standardized columns.
//!
//! Minimizes ½βᵀGβ − cᵀβ + λ‖β‖₁ for a decreasing sequence of penalties.
//! The active Gram block is kept as an incrementally updated Cholesky factor.

/// Lower-triangular factor of the active Gram block, stored with a fixed
/// row stride.
struct ActiveFactor {
    stride: usize,
    size: usize,
    l: Vec<f64>,
}

impl ActiveFactor {
    fn new(stride: usize) -> Self {
        ActiveFactor {
            stride,
            size: 0,
            l: vec![0.0; stride * stride],
        }
    }

    #[cfg(test)]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.l[r * self.stride + c]
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.l[r * self.stride..r * self.stride + r + 1]
    }

    /// Solves L·w = b in place.
    fn forward(&self, b: &mut [f64]) {
        for i in 0..b.len() {
            let row = self.row(i);
            let v = b[i] - dot(&row[..i], &b[..i]);
            b[i] = v / row[i];
        }
    }

    /// Appends a column with cross products `cross` against the current
    /// members and squared norm `diag`. Returns false if the extended block
    /// is numerically singular.
    fn push(&mut self, cross: &mut [f64], diag: f64) -> bool {
        let s = self.size;
        self.forward(cross);
        let d2 = diag - cross.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > SINGULAR_PIVOT * diag) {
            return false;
        }
        let row = s * self.stride;
        self.l[row..row + s].copy_from_slice(cross);
        self.l[row + s] = d2.sqrt();
        self.size += 1;
        true
    }

    /// Removes member `i`, restoring triangularity with Givens rotations.
    fn remove(&mut self, i: usize) {
        let s = self.size;
        let st = self.stride;
        for r in i..s - 1 {
            let (dst, src) = (r * st, (r + 1) * st);
            self.l.copy_within(src..src + r + 2, dst);
        }
        let s = s - 1;
        for r in i..s {
            let x = self.l[r * st + r];
            let y = self.l[r * st + r + 1];
            let h = x.hypot(y);
            let (c, sn) = (x / h, y / h);
            for q in r..s {
                let u = self.l[q * st + r];
                let v = self.l[q * st + r + 1];
                self.l[q * st + r] = c * u + sn * v;
                self.l[q * st + r + 1] = -sn * u + c * v;
            }
        }
        for q in 0..s {
            self.l[q * st + s] = 0.0;
        }
        self.size = s;
    }

    fn solve(&self, b: &mut [f64]) {
        let s = self.size;
        self.forward(&mut b[..s]);
        // Lᵀ·x = w, eliminating one row of L at a time.
        for i in (0..s).rev() {
            let row = self.row(i);
            let x = b[i] / row[i];
            b[i] = x;
            for (bk, lk) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lk * x;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Relative pivot below which a new active column is treated as dependent.
const SINGULAR_PIVOT: f64 = 1e-10;

#[derive(Clone, Copy)]
enum Event {
    Add(usize, f64),
    Drop(usize),
}

/// Walks the path through each penalty in `targets` (non-increasing),
/// handing the solution at each to `visit`. `gram` is the row-major `a x a`
/// Gram matrix with unit diagonal scale, `xty` the correlations with the
/// centered response. Returns the most recent point on the path and how
/// many targets were reached; fewer than `targets.len()` means the path stopped
/// where the active block became singular or the step budget ran out.
/// Where a visited solution sits on the path: β = anchor + t·dir on the
/// `active` coordinates, zero elsewhere. `id` changes whenever the active
/// set does.
pub(crate) struct Segment<'a> {
    pub id: usize,
    pub active: &'a [usize],
    pub anchor: &'a [f64],
    pub dir: &'a [f64],
    pub t: f64,
}

pub(crate) fn lasso_path(
    gram: &[f64],
    xty: &[f64],
    targets: &[f64],
    mut visit: impl FnMut(usize, &[f64], Option<Segment<'_>>),
) -> (Vec<f64>, usize) {
    let a = xty.len();
    let lmax = xty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut beta = vec![0.0; a];
    let mut k = 0;
    while k < targets.len() && (targets[k] >= lmax || lmax == 0.0) {
        visit(k, &beta, None);
        k += 1;
    }
    if k == targets.len() {
        return (beta, k);
    }

    let mut grad = xty.to_vec();
    let mut lambda = lmax;
    let mut active: Vec<usize> = Vec::with_capacity(a);
    let mut signs: Vec<f64> = Vec::with_capacity(a);
    let mut in_active = vec![false; a];
    let mut factor = ActiveFactor::new(a);
    let mut cross = vec![0.0; a];

    let mut add = |j: usize,
                   s: f64,
                   active: &mut Vec<usize>,
                   signs: &mut Vec<f64>,
                   in_active: &mut Vec<bool>,
                   factor: &mut ActiveFactor|
     -> bool {
        for (ci, &m) in cross.iter_mut().zip(active.iter()) {
            *ci = gram[m * a + j];
        }
        if !factor.push(&mut cross[..active.len()], gram[j * a + j]) {
            return false;
        }
        active.push(j);
        signs.push(s);
        in_active[j] = true;
        true
    };

    let first = (0..a)
        .max_by(|&x, &y| xty[x].abs().total_cmp(&xty[y].abs()).then(y.cmp(&x)))
        .unwrap();
    if !add(first, xty[first].signum(), &mut active, &mut signs, &mut in_active, &mut factor) {
        return (beta, k);
    }

    let mut dir = vec![0.0; a];
    let mut corr = vec![0.0; a];
    // Active coefficients at the last event; between events the path is
    // linear in the distance travelled from `lambda`.
    let mut anchor: Vec<f64> = vec![0.0];
    let mut just_dropped: Option<(usize, f64)> = None;
    let mut just_added: Option<usize> = Some(first);
    let max_steps = 50 * a + 100;
    for id in 0..max_steps {
        let s = active.len();
        dir[..s].copy_from_slice(&signs);
        factor.solve(&mut dir[..s]);
        corr.fill(0.0);
        for (&m, d) in active.iter().zip(&dir[..s]) {
            for (cj, g) in corr.iter_mut().zip(&gram[m * a..(m + 1) * a]) {
                *cj += d * g;
            }
        }

        let tiny = 1e-13 * lambda;
        let mut step = f64::INFINITY;
        let mut event = None;
        for j in 0..a {
            if in_active[j] {
                continue;
            }
            let (g, c) = (grad[j], corr[j]);
            if 1.0 - c > 1e-15 && just_dropped != Some((j, 1.0)) {
                let t = (lambda - g) / (1.0 - c);
                if t > tiny && t < step {
                    step = t;
                    event = Some(Event::Add(j, 1.0));
                }
            }
            if 1.0 + c > 1e-15 && just_dropped != Some((j, -1.0)) {
                let t = (lambda + g) / (1.0 + c);
                if t > tiny && t < step {
                    step = t;
                    event = Some(Event::Add(j, -1.0));
                }
            }
        }
        for (i, &m) in active.iter().enumerate() {
            if Some(m) == just_added || dir[i] == 0.0 {
                continue;
            }
            let t = -beta[m] / dir[i];
            if t > tiny && t < step {
                step = t;
                event = Some(Event::Drop(i));
            }
        }

        // Targets reached before the next event.
        while k < targets.len() && lambda - targets[k] <= step {
            let t = (lambda - targets[k]).max(0.0);
            for (i, &m) in active.iter().enumerate() {
                beta[m] = anchor[i] + t * dir[i];
            }
            let seg = Segment {
                id,
                active: &active,
                anchor: &anchor,
                dir: &dir[..s],
                t,
            };
            visit(k, &beta, Some(seg));
            k += 1;
        }
        if k == targets.len() {
            return (beta, k);
        }

        lambda -= step;
        for (i, &m) in active.iter().enumerate() {
            beta[m] = anchor[i] + step * dir[i];
        }
        for (g, c) in grad.iter_mut().zip(&corr) {
            *g -= step * c;
        }
        for (i, &m) in active.iter().enumerate() {
            grad[m] = lambda * signs[i];
        }
        just_dropped = None;
        just_added = None;
        let Some(event) = event else {
            return (beta, k);
        };
        match event {
            Event::Add(j, s) => {
                if !add(j, s, &mut active, &mut signs, &mut in_active, &mut factor) {
                    return (beta, k);
                }
                just_added = Some(j);
            }
            Event::Drop(i) => {
                let m = active.remove(i);
                let s = signs.remove(i);
                in_active[m] = false;
                beta[m] = 0.0;
                factor.remove(i);
                just_dropped = Some((m, s));
            }
        }
        anchor.clear();
        anchor.extend(active.iter().map(|&m| beta[m]));
    }
    (beta, k)
}
