//! Sparse generators of the lattice sub-Laplacian.
//!
//! Every generator is a Metzler matrix: nonnegative off-diagonal rates and a
//! diagonal equal to minus the total outgoing rate (rates leaving through a
//! Dirichlet wall are lost). Explicit steps `I + Δt·A` are therefore
//! nonnegative and substochastic as soon as `Δt ≤ 1/max|Aᵢᵢ|`.
//!
//! On ℍ¹ each `Xᵢ²` is a directional second difference taken along the
//! integral line of `Xᵢ`, which is straight: a step of `hx` in x moves z by
//! `−hx·y/2`, a step of `hy` in y moves z by `+hy·x/2`. The end points are
//! linearly interpolated between the two nearest z-cells, which keeps all
//! weights nonnegative and, because the z-shift is constant along each
//! x-line (resp. y-line), keeps the columns summing to one on periodic z.

use crate::group::{Boundary, GroupKind, GroupModel, MAX_DIM};
use crate::par;

#[derive(Debug, Clone)]
pub struct Generator {
    row_start: Vec<u32>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

impl Generator {
    pub fn assemble(g: &GroupModel) -> Self {
        match g.kind {
            GroupKind::Heisenberg1 => assemble_heisenberg(g),
            GroupKind::Euclidean | GroupKind::Torus => assemble_laplacian(g),
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_start[i] as usize, self.row_start[i + 1] as usize);
        self.cols[a..b]
            .iter()
            .zip(&self.weights[a..b])
            .map(|(&c, &w)| (c as usize, w))
    }

    /// `max |Aᵢᵢ|`.
    pub fn max_rate(&self) -> f64 {
        par::max_by(self.diag.len(), |i| -self.diag[i]).max(0.0)
    }

    /// Largest explicit step keeping every weight of `I + Δt·A` nonnegative.
    pub fn explicit_dt_limit(&self) -> f64 {
        let r = self.max_rate();
        if r > 0.0 {
            1.0 / r
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    fn off_diagonal(&self, i: usize, u: &[f64]) -> f64 {
        let (a, b) = (self.row_start[i] as usize, self.row_start[i + 1] as usize);
        let mut s = 0.0;
        for k in a..b {
            s += self.weights[k] * u[self.cols[k] as usize];
        }
        s
    }

    /// `out = u + Δt·A u`.
    pub fn euler_step(&self, u: &[f64], dt: f64, out: &mut [f64]) {
        par::fill(out, |i| {
            (1.0 + dt * self.diag[i]) * u[i] + dt * self.off_diagonal(i, u)
        });
    }

    /// `out = (I + Δt/2·A) u`.
    pub fn half_step_rhs(&self, u: &[f64], dt: f64, out: &mut [f64]) {
        self.euler_step(u, 0.5 * dt, out)
    }

    /// One Jacobi sweep for `(I − Δt/2·A) x = rhs`.
    pub fn jacobi_sweep(&self, x: &[f64], rhs: &[f64], dt: f64, out: &mut [f64]) {
        let h = 0.5 * dt;
        par::fill(out, |i| {
            (rhs[i] + h * self.off_diagonal(i, x)) / (1.0 - h * self.diag[i])
        });
    }

    /// Minimum weight and maximum row sum of `I + Δt·A`.
    pub fn explicit_row_stats(&self, dt: f64) -> (f64, f64) {
        let n = self.len();
        let min_diag = par::min_by(n, |i| 1.0 + dt * self.diag[i]);
        let min_off = par::min_by(n, |i| {
            self.row(i).map(|(_, w)| dt * w).fold(f64::INFINITY, f64::min)
        });
        let max_sum = par::max_by(n, |i| {
            1.0 + dt * self.diag[i] + self.row(i).map(|(_, w)| dt * w).sum::<f64>()
        });
        (min_diag.min(min_off), max_sum)
    }
}

struct Builder {
    row_start: Vec<u32>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

impl Builder {
    fn new(n: usize, per_row: usize) -> Self {
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        Self {
            row_start,
            cols: Vec::with_capacity(n * per_row),
            weights: Vec::with_capacity(n * per_row),
            diag: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, col: usize, w: f64) {
        if w > 0.0 {
            self.cols.push(col as u32);
            self.weights.push(w);
        }
    }

    fn end_row(&mut self, diag: f64) {
        self.diag.push(diag);
        self.row_start.push(self.cols.len() as u32);
    }

    fn finish(self) -> Generator {
        Generator {
            row_start: self.row_start,
            cols: self.cols,
            weights: self.weights,
            diag: self.diag,
        }
    }
}

fn neighbour(idx: usize, step: isize, n: usize, boundary: Boundary) -> Option<usize> {
    let j = idx as isize + step;
    if (0..n as isize).contains(&j) {
        Some(j as usize)
    } else {
        match boundary {
            Boundary::Periodic => Some(j.rem_euclid(n as isize) as usize),
            Boundary::Dirichlet => None,
        }
    }
}

fn assemble_laplacian(g: &GroupModel) -> Generator {
    let n = g.len();
    let nd = g.ndim();
    let strides = g.strides();
    let mut b = Builder::new(n, 2 * nd);
    let mut diag_rate = 0.0;
    for axis in &g.axes {
        diag_rate -= 2.0 / (axis.spacing * axis.spacing);
    }
    for flat in 0..n {
        let idx = g.multi_index(flat);
        for (k, axis) in g.axes.iter().enumerate() {
            let w = 1.0 / (axis.spacing * axis.spacing);
            for step in [-1isize, 1] {
                if let Some(j) = neighbour(idx[k], step, axis.points, axis.boundary) {
                    let col = flat - idx[k] * strides[k] + j * strides[k];
                    b.push(col, w);
                }
            }
        }
        b.end_row(diag_rate);
    }
    b.finish()
}

fn assemble_heisenberg(g: &GroupModel) -> Generator {
    let [ax, ay, az] = [g.axes[0], g.axes[1], g.axes[2]];
    let n = g.len();
    let strides = g.strides();
    let mut b = Builder::new(n, 8);
    let wx = 1.0 / (ax.spacing * ax.spacing);
    let wy = 1.0 / (ay.spacing * ay.spacing);
    let diag_rate = -2.0 * (wx + wy);

    // Distribute weight `w` to the z-position `kz` (fractional index) on the
    // line with fixed (i, j).
    let spread = |b: &mut Builder, i: usize, j: usize, kz: f64, w: f64| {
        let k0 = kz.floor();
        let theta = kz - k0;
        let base = i * strides[0] + j * strides[1];
        for (dk, wk) in [(0isize, 1.0 - theta), (1, theta)] {
            if wk <= 0.0 {
                continue;
            }
            let kk = k0 as isize + dk;
            let target = if (0..az.points as isize).contains(&kk) {
                Some(kk as usize)
            } else {
                match az.boundary {
                    Boundary::Periodic => Some(kk.rem_euclid(az.points as isize) as usize),
                    Boundary::Dirichlet => None,
                }
            };
            if let Some(kk) = target {
                b.push(base + kk * strides[2], w * wk);
            }
        }
    };

    let mut idx = [0usize; MAX_DIM];
    for flat in 0..n {
        idx.copy_from_slice(&g.multi_index(flat));
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        let x = ax.coord(i);
        let y = ay.coord(j);
        let kf = k as f64;
        // X₁: (x ± hx, y, z ∓ hx·y/2)
        let s1 = ax.spacing * y / (2.0 * az.spacing);
        if let Some(ii) = neighbour(i, 1, ax.points, ax.boundary) {
            spread(&mut b, ii, j, kf - s1, wx);
        }
        if let Some(ii) = neighbour(i, -1, ax.points, ax.boundary) {
            spread(&mut b, ii, j, kf + s1, wx);
        }
        // X₂: (x, y ± hy, z ± hy·x/2)
        let s2 = ay.spacing * x / (2.0 * az.spacing);
        if let Some(jj) = neighbour(j, 1, ay.points, ay.boundary) {
            spread(&mut b, i, jj, kf + s2, wy);
        }
        if let Some(jj) = neighbour(j, -1, ay.points, ay.boundary) {
            spread(&mut b, i, jj, kf - s2, wy);
        }
        b.end_row(diag_rate);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, GroupSpec};

    fn heis(n: usize) -> GroupModel {
        make_group(&GroupSpec::new(
            GroupKind::Heisenberg1,
            vec![6.0, 6.0, 5.0],
            vec![n, n, n],
        ))
        .unwrap()
    }

    #[test]
    fn laplacian_rows_sum_to_zero_on_torus() {
        let g = make_group(&GroupSpec::cube(GroupKind::Torus, 2, 4.0, 16)).unwrap();
        let a = Generator::assemble(&g);
        for i in 0..a.len() {
            let s: f64 = a.diag()[i] + a.row(i).map(|(_, w)| w).sum::<f64>();
            assert!(s.abs() < 1e-9);
        }
        assert_eq!(a.nnz(), 4 * a.len());
    }

    #[test]
    fn heisenberg_weights_nonnegative_and_substochastic() {
        let g = heis(16);
        let a = Generator::assemble(&g);
        let dt = a.explicit_dt_limit();
        let (min_w, max_sum) = a.explicit_row_stats(dt);
        assert!(min_w >= -1e-15, "{min_w}");
        assert!(max_sum <= 1.0 + 1e-14, "{max_sum}");
        // interior rows conserve mass exactly
        let idx = g.flat_index(&[8, 8, 3]);
        let s: f64 = a.diag()[idx] + a.row(idx).map(|(_, w)| w).sum::<f64>();
        assert!(s.abs() < 1e-9);
    }

    #[test]
    fn heisenberg_generator_is_symmetric() {
        let g = heis(12);
        let a = Generator::assemble(&g);
        let n = a.len();
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for (j, w) in a.row(i) {
                dense[i * n + j] += w;
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((dense[i * n + j] - dense[j * n + i]).abs());
            }
        }
        assert!(worst < 1e-9, "asymmetry {worst}");
    }

    #[test]
    fn heisenberg_stencil_differentiates_polynomials() {
        // X₁²(x²) = 2, X₂²(y²) = 2, (X₁² + X₂²)(z) = 0 at interior points.
        let g = heis(24);
        let a = Generator::assemble(&g);
        let apply = |f: &dyn Fn([f64; 3]) -> f64, flat: usize| {
            let c = g.coords_of(flat);
            let mut s = a.diag()[flat] * f(c);
            for (j, w) in a.row(flat) {
                let mut cj = g.coords_of(j);
                // unwrap periodic z relative to the row point
                let lz = g.axes[2].extent();
                cj[2] = c[2] + g.axes[2].wrap(cj[2] - c[2]);
                let _ = lz;
                s += w * f(cj);
            }
            s
        };
        let flat = g.flat_index(&[12, 10, 12]);
        let lx = apply(&|c| c[0] * c[0], flat);
        assert!((lx - 2.0).abs() < 1e-9, "{lx}");
        let lz = apply(&|c| c[2], flat);
        assert!(lz.abs() < 1e-9, "{lz}");
    }
}
