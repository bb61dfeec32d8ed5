use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{GridMeta, Tensor};

/// Two-valued coefficient obtained by thresholding a field at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub high: f64,
    pub low: f64,
}

impl Default for Threshold {
    fn default() -> Self {
        Self {
            high: 12.0,
            low: 3.0,
        }
    }
}

impl Threshold {
    pub fn apply(&self, g: &Tensor) -> Tensor {
        g.map(|v| if v >= 0.0 { self.high } else { self.low })
    }
}

/// `a = 12` where `g >= 0`, else `a = 3`.
pub fn darcy_coefficient(g: &Tensor) -> Tensor {
    Threshold::default().apply(g)
}

/// Right-hand side of the Darcy equation.
#[derive(Clone, Copy, Debug)]
pub enum Forcing<'a> {
    Constant(f64),
    /// Nodal values on the same grid as the coefficient.
    Field(&'a Tensor),
}

impl Forcing<'_> {
    fn at(&self, i: usize, j: usize, n: usize) -> f64 {
        match self {
            Forcing::Constant(c) => *c,
            Forcing::Field(t) => t.data()[i * n + j],
        }
    }
}

/// Pressure field and convergence record of one solve.
#[derive(Clone, Debug)]
pub struct DarcySolve {
    pub u: Tensor,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// One coefficient/solution pair on a node grid of the unit square.
#[derive(Clone, Debug)]
pub struct DarcySample {
    pub a: Tensor,
    pub u: Tensor,
    pub f: f64,
    pub grid: GridMeta,
}

pub const CG_TOLERANCE: f64 = 1e-8;

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

// Face transmissibilities of the 5-point stencil; boundary nodes carry zero
// pressure, so the operator only acts on interior nodes.
struct Stencil {
    n: usize,
    // east[i * n + j] couples (i, j) with (i, j + 1)
    east: Vec<f64>,
    // south[i * n + j] couples (i, j) with (i + 1, j)
    south: Vec<f64>,
    diag: Vec<f64>,
}

impl Stencil {
    fn new(a: &[f64], n: usize) -> Self {
        let mut east = vec![0.0; n * n];
        let mut south = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if j + 1 < n {
                    east[i * n + j] = harmonic(a[i * n + j], a[i * n + j + 1]);
                }
                if i + 1 < n {
                    south[i * n + j] = harmonic(a[i * n + j], a[(i + 1) * n + j]);
                }
            }
        }
        let mut diag = vec![0.0; n * n];
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                diag[k] = east[k] + east[k - 1] + south[k] + south[k - n];
            }
        }
        Self {
            n,
            east,
            south,
            diag,
        }
    }

    fn apply(&self, p: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                out[k] = self.diag[k] * p[k]
                    - self.east[k] * p[k + 1]
                    - self.east[k - 1] * p[k - 1]
                    - self.south[k] * p[k + n]
                    - self.south[k - n] * p[k - n];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `-div(a grad u) = f` on the unit square with `u = 0` on the boundary.
///
/// Nodes sit at `(i, j) / (n - 1)`; the system is the harmonic-mean 5-point
/// finite-volume scheme, solved with Jacobi-preconditioned conjugate gradients
/// to a relative residual of [`CG_TOLERANCE`].
pub fn darcy_solve_fd(a: &Tensor, f: Forcing) -> Result<DarcySolve> {
    let (n, w) = a.spatial()?;
    if a.ndim() != 2 || n != w {
        return Err(shape_err!(
            "Darcy solver needs a square 2-D grid, got {:?}",
            a.shape()
        ));
    }
    if n < 3 {
        return Err(shape_err!("Darcy grid {n}x{n} has no interior nodes"));
    }
    if let Forcing::Field(t) = f {
        if t.shape() != a.shape() {
            return Err(shape_err!(
                "forcing {:?} does not match coefficient {:?}",
                t.shape(),
                a.shape()
            ));
        }
    }
    if a.data().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Data(
            "Darcy coefficient must be positive and finite".into(),
        ));
    }
    let st = Stencil::new(a.data(), n);
    let h = 1.0 / (n - 1) as f64;
    let mut b = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            b[i * n + j] = h * h * f.at(i, j, n);
        }
    }
    let b_norm = dot(&b, &b).sqrt();
    let mut u = vec![0.0; n * n];
    if b_norm == 0.0 {
        return Ok(DarcySolve {
            u: Tensor::new(vec![n, n], u)?,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let precondition = |r: &[f64], z: &mut [f64]| {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&st.diag) {
            *z = if *d > 0.0 { r / d } else { 0.0 };
        }
    };
    let mut r = b;
    let mut z = vec![0.0; n * n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n * n];
    let mut rz = dot(&r, &z);
    let max_iter = 10 * n;
    for it in 1..=max_iter {
        st.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n * n {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(Error::Numeric(format!(
                "Darcy CG produced a non-finite residual at iteration {it}"
            )));
        }
        if rel <= CG_TOLERANCE {
            return Ok(DarcySolve {
                u: Tensor::new(vec![n, n], u)?,
                iterations: it,
                rel_residual: rel,
            });
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n * n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::Numeric(format!(
        "Darcy CG did not reach {CG_TOLERANCE:e} within {max_iter} iterations on a {n}x{n} grid"
    )))
}
