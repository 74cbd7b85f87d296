//! Independent oracles shared by the integration tests. None of these call
//! the FFT solvers or the Newton driver of the library.
#![allow(dead_code)]

use elastica::grid::{div_minus, forward_diff, Axis, ScalarField, VectorField2};
use elastica::metric::{JacobianField, Metric2, MetricField};
use elastica::MultiChannelImage;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(m: usize, n: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
    ScalarField::from_fn(m, n, |_, _| rng.random_range(lo..hi))
}

pub fn random_vector_field(m: usize, n: usize, rng: &mut ChaCha8Rng, scale: f64) -> VectorField2 {
    VectorField2::new(random_field(m, n, rng, -scale, scale), random_field(m, n, rng, -scale, scale))
}

pub fn random_image(m: usize, n: usize, d: usize, rng: &mut ChaCha8Rng) -> MultiChannelImage {
    MultiChannelImage::from_fn(m, n, d, |_, _, _| rng.random_range(0.0..1.0))
}

pub fn random_jacobian(m: usize, n: usize, d: usize, rng: &mut ChaCha8Rng, scale: f64) -> JacobianField {
    let rows: Vec<_> = (0..d).map(|_| random_vector_field(m, n, rng, scale)).collect();
    JacobianField::from_rows(&rows)
}

/// Three colored regions (disk, rectangle, background) on an `m x m` grid.
pub fn synthetic_scene(m: usize) -> MultiChannelImage {
    let c = m as f64 / 2.0;
    let r = m as f64 * 0.22;
    MultiChannelImage::from_fn(m, m, 3, |i, j, k| {
        let (x, y) = (i as f64, j as f64);
        if (x - 1.2 * c).powi(2) + (y - 0.8 * c).powi(2) < r * r {
            [0.9, 0.3, 0.2][k]
        } else if i > m / 8 && i < m / 2 && j > m / 2 && j < m * 7 / 8 {
            [0.2, 0.7, 0.4][k]
        } else {
            [0.3, 0.35, 0.8][k]
        }
    })
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn max_abs_diff_fields(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &ScalarField) -> f64 {
    a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Nelder-Mead with standard coefficients, restarted from its own result
/// until a restart no longer moves the best point.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64) -> Vec<f64> {
    let mut best = x0.to_vec();
    let mut scale = step;
    for _ in 0..20 {
        let next = nelder_mead_once(&f, &best, scale, tol, 200_000);
        let moved = next.iter().zip(&best).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        best = next;
        if moved < tol {
            break;
        }
        scale = (moved * 10.0).max(tol * 100.0);
    }
    best
}

fn nelder_mead_once(f: &impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64, max_evals: usize) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0f64, f64::max);
        if size < tol {
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|i| simplex[..n].iter().map(|v| v[i]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|i| centroid[i] + t * (simplex[n][i] - centroid[i])).collect() };

        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
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
                let c = along(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = f(&c);
                (c, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        v[i] = best[i] + 0.5 * (v[i] - best[i]);
                    }
                }
                for k in 1..=n {
                    values[k] = f(&simplex[k]);
                }
                evals += n;
            }
        }
    }
    let mut best = 0;
    for k in 1..values.len() {
        if values[k] < values[best] {
            best = k;
        }
    }
    simplex[best].clone()
}

/// `E1` written out directly: `|q - p|^2 / (2 tau) + sqrt(m) + beta s2 / sqrt(m)`.
pub fn e1_direct(q: &[f64], p: &[f64], s2: f64, tau: f64, alpha: f64, beta: f64) -> f64 {
    let d = q.len() / 2;
    let (mut g11, mut g12, mut g22) = (alpha, 0.0, alpha);
    for k in 0..d {
        g11 += q[2 * k] * q[2 * k];
        g12 += q[2 * k] * q[2 * k + 1];
        g22 += q[2 * k + 1] * q[2 * k + 1];
    }
    let m = g11 * g22 - g12 * g12;
    let prox: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    prox / (2.0 * tau) + m.sqrt() + beta * s2 / m.sqrt()
}

/// Dense matrix of a linear map on `M x N` vector fields, columns ordered
/// as all `x1` entries then all `x2` entries.
pub fn dense_vector_operator(m: usize, n: usize, apply: impl Fn(&VectorField2) -> VectorField2) -> DMatrix<f64> {
    let size = m * n;
    let mut mat = DMatrix::zeros(2 * size, 2 * size);
    for col in 0..2 * size {
        let mut e = VectorField2::zeros(m, n);
        if col < size {
            e.x1.values_mut()[col] = 1.0;
        } else {
            e.x2.values_mut()[col - size] = 1.0;
        }
        let out = apply(&e);
        for row in 0..size {
            mat[(row, col)] = out.x1.values()[row];
            mat[(size + row, col)] = out.x2.values()[row];
        }
    }
    mat
}

fn to_vector(v: &VectorField2) -> DVector<f64> {
    DVector::from_iterator(
        2 * v.x1.len(),
        v.x1.values().iter().chain(v.x2.values()).copied(),
    )
}

fn from_vector(x: &DVector<f64>, m: usize, n: usize) -> VectorField2 {
    let size = m * n;
    VectorField2::new(
        ScalarField::from_vec(m, n, x.as_slice()[..size].to_vec()),
        ScalarField::from_vec(m, n, x.as_slice()[size..].to_vec()),
    )
}

/// `L - grad+(w div- L)` style operator: `gamma1 L - grad+(w * div- L)` with
/// a pointwise weight `w`.
pub fn weighted_lambda_operator(l: &VectorField2, gamma1: f64, w: &ScalarField) -> VectorField2 {
    let mut d = div_minus(l);
    for (v, c) in d.values_mut().iter_mut().zip(w.values()) {
        *v *= c;
    }
    let mut x1 = l.x1.map(|v| gamma1 * v);
    x1.axpy(-1.0, &forward_diff(&d, Axis::X1));
    let mut x2 = l.x2.map(|v| gamma1 * v);
    x2.axpy(-1.0, &forward_diff(&d, Axis::X2));
    VectorField2::new(x1, x2)
}

/// Direct LU solve of `gamma1 L - grad+(2 beta tau / sqrt(g) div- L) = gamma1 lambda_n`.
pub fn dense_lambda_solve(lambda_n: &VectorField2, g: &ScalarField, gamma1: f64, beta: f64, tau: f64) -> VectorField2 {
    let (m, n) = (g.width(), g.height());
    let w = g.map(|det| 2.0 * beta * tau / det.sqrt());
    let mat = dense_vector_operator(m, n, |l| weighted_lambda_operator(l, gamma1, &w));
    let rhs = to_vector(lambda_n) * gamma1;
    from_vector(&mat.lu().solve(&rhs).expect("nonsingular"), m, n)
}

/// Direct LU solve of the frozen-coefficient system with `c1 = max w`.
pub fn dense_frozen_solve(lambda_n: &VectorField2, g: &ScalarField, gamma1: f64, beta: f64, tau: f64) -> VectorField2 {
    let (m, n) = (g.width(), g.height());
    let w = g.map(|det| 2.0 * beta * tau / det.sqrt());
    let c1 = w.values().iter().copied().fold(0.0, f64::max);
    let frozen = ScalarField::constant(m, n, c1);
    let correction = w.map(|v| c1 - v);
    let mat = dense_vector_operator(m, n, |l| weighted_lambda_operator(l, gamma1, &frozen));
    let rhs_field = weighted_lambda_operator(lambda_n, gamma1, &correction);
    from_vector(&mat.lu().solve(&to_vector(&rhs_field)).expect("nonsingular"), m, n)
}

/// `E2` at one pixel and channel: `|mu G / sqrt(g) - p|^2 + gamma1 |mu - lambda|^2`.
pub fn e2_direct(mu: [f64; 2], g: &Metric2, p: [f64; 2], lambda: [f64; 2], gamma1: f64) -> f64 {
    let s = (g.g11 * g.g22 - g.g12 * g.g12).sqrt();
    let q = [(mu[0] * g.g11 + mu[1] * g.g12) / s, (mu[0] * g.g12 + mu[1] * g.g22) / s];
    (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + gamma1 * ((mu[0] - lambda[0]).powi(2) + (mu[1] - lambda[1]).powi(2))
}

/// Minimizer of a 2-variable quadratic recovered from function values only:
/// the Hessian and gradient at 0 come from exact second differences.
pub fn quadratic_minimizer(f: impl Fn([f64; 2]) -> f64) -> [f64; 2] {
    let f0 = f([0.0, 0.0]);
    let f1 = f([1.0, 0.0]);
    let f2 = f([0.0, 1.0]);
    let fm1 = f([-1.0, 0.0]);
    let fm2 = f([0.0, -1.0]);
    let f12 = f([1.0, 1.0]);
    let h11 = f1 + fm1 - 2.0 * f0;
    let h22 = f2 + fm2 - 2.0 * f0;
    let b1 = (f1 - fm1) / 2.0;
    let b2 = (f2 - fm2) / 2.0;
    let h12 = f12 - f0 - b1 - b2 - 0.5 * h11 - 0.5 * h22;
    let h = Matrix2::new(h11, h12, h12, h22);
    let x = h.lu().solve(&Vector2::new(-b1, -b2)).expect("positive definite");
    [x[0], x[1]]
}

/// A straight-line transcription of fractional step 1: coordinatewise
/// Newton at each pixel, metric relaxation, dense frozen-coefficient solve.
pub fn reference_step1(
    p: &JacobianField,
    lambda: &JacobianField,
    metric: &MetricField,
    alpha: f64,
    beta: f64,
    tau: f64,
    gamma1: f64,
    gamma2: f64,
    newton_tol: f64,
) -> (JacobianField, JacobianField, MetricField) {
    let (m, n, d) = (p.width(), p.height(), p.channels());
    // s2 = sum_k (div- lambda_k)^2
    let mut s2 = vec![0.0; m * n];
    for k in 0..d {
        let row = lambda.row(k);
        for j in 0..n {
            for i in 0..m {
                let im = (i + m - 1) % m;
                let jm = (j + n - 1) % n;
                let dv = row.x1.get(i, j) - row.x1.get(im, j) + row.x2.get(i, j) - row.x2.get(i, jm);
                s2[j * m + i] += dv * dv;
            }
        }
    }
    let mut p_new = p.clone();
    for pix in 0..m * n {
        let center: Vec<[f64; 2]> = p.pixel(pix).to_vec();
        let mut q = center.clone();
        for _ in 0..10_000 {
            let (mut g11, mut g12, mut g22) = (alpha, 0.0, alpha);
            for r in &q {
                g11 += r[0] * r[0];
                g12 += r[0] * r[1];
                g22 += r[1] * r[1];
            }
            let mm = g11 * g22 - g12 * g12;
            let a = 0.5 * (mm.powf(-0.5) - beta * s2[pix] * mm.powf(-1.5));
            let b = 0.5 * (-0.5 * mm.powf(-1.5) + 1.5 * beta * s2[pix] * mm.powf(-2.5));
            let mut next = q.clone();
            let mut step = 0.0f64;
            for k in 0..d {
                let (x, y) = (q[k][0], q[k][1]);
                let dm = [2.0 * g22 * x - 2.0 * g12 * y, 2.0 * g11 * y - 2.0 * g12 * x];
                let d2m = [2.0 * g22 - 2.0 * y * y, 2.0 * g11 - 2.0 * x * x];
                for r in 0..2 {
                    let grad = (q[k][r] - center[k][r]) / tau + a * dm[r];
                    let mut hess = 1.0 / tau + a * d2m[r] + b * dm[r] * dm[r];
                    if hess < 1e-8 {
                        hess = 1.0 / tau;
                    }
                    next[k][r] = q[k][r] - grad / hess;
                    step = step.max((grad / hess).abs());
                }
            }
            q = next;
            if step < newton_tol {
                break;
            }
        }
        p_new.pixel_mut(pix).copy_from_slice(&q);
    }

    let weight = (-gamma2 * tau / 3.0).exp();
    let entries: Vec<Metric2> = (0..m * n)
        .map(|pix| {
            let old = metric.at(pix);
            let (mut g11, mut g12, mut g22) = (alpha, 0.0, alpha);
            for r in p_new.pixel(pix) {
                g11 += r[0] * r[0];
                g12 += r[0] * r[1];
                g22 += r[1] * r[1];
            }
            Metric2::new(
                weight * old.g11 + (1.0 - weight) * g11,
                weight * old.g12 + (1.0 - weight) * g12,
                weight * old.g22 + (1.0 - weight) * g22,
            )
        })
        .collect();
    let metric_new = MetricField::from_entries(m, n, entries);
    let g = metric_new.determinant();

    let rows: Vec<VectorField2> = (0..d)
        .map(|k| dense_frozen_solve(&lambda.row(k), &g, gamma1, beta, tau))
        .collect();
    (p_new, JacobianField::from_rows(&rows), metric_new)
}

/// Circular convolution by the direct sum over taps; `adjoint` flips the offsets.
pub fn direct_convolve(f: &ScalarField, taps: &elastica::KernelTaps, adjoint: bool) -> ScalarField {
    let (m, n) = (f.width() as isize, f.height() as isize);
    ScalarField::from_fn(f.width(), f.height(), |i, j| {
        taps.offsets()
            .map(|(di, dj, w)| {
                let (si, sj) = if adjoint { (i as isize + di, j as isize + dj) } else { (i as isize - di, j as isize - dj) };
                w * f.get(si.rem_euclid(m) as usize, sj.rem_euclid(n) as usize)
            })
            .sum()
    })
}

/// `tau u - eta div-(grad+ u)` by the 5-point stencil.
pub fn helmholtz_stencil(u: &ScalarField, eta: f64, tau: f64) -> ScalarField {
    let mut out = elastica::grid::laplacian(u).map(|v| -eta * v);
    out.axpy(tau, u);
    out
}

pub fn l2(f: &ScalarField) -> f64 {
    f.sum_of_squares().sqrt()
}

pub fn l2_vec(v: &VectorField2) -> f64 {
    (v.x1.sum_of_squares() + v.x2.sum_of_squares()).sqrt()
}

pub fn diff_vec(a: &VectorField2, b: &VectorField2) -> VectorField2 {
    let mut x1 = a.x1.clone();
    x1.axpy(-1.0, &b.x1);
    let mut x2 = a.x2.clone();
    x2.axpy(-1.0, &b.x2);
    VectorField2::new(x1, x2)
}
