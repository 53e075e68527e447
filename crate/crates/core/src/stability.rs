//! Closed-loop matrices of the PI laws and the frequency controllers, reduction to the
//! disagreement subspace, and stability classification.
//!
//! For the homogeneous PI laws two routes are always computed: Routh–Hurwitz on the
//! per-Laplacian-mode polynomial, and the eigenvalues of the deflated closed-loop matrix.
//! A disagreement between them is reported as an error rather than silently resolved.

use num_complex::Complex;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{disagreement_basis, symmetric_eigenvalues, Graph, GraphError};
use crate::numerics::{
    classify_margin, cubic_roots, eigenvalues_general, quadratic_roots, routh_hurwitz_2, routh_hurwitz_3, Matrix,
    NumericsError, Polynomial2, Polynomial3, StabilityClass, DEFAULT_MARGINAL_TOL,
};
use crate::power::PowerNetwork;
use crate::protocols::ProtocolKind;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("graph is not connected")]
    Disconnected,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("no disagreement reduction defined for {0:?}")]
    UnsupportedKind(ProtocolKind),
    #[error("analytic route says {analytic}, spectral route says {spectral} (margin {margin})")]
    RouteDisagreement { analytic: StabilityClass, spectral: StabilityClass, margin: f64 },
}

/// Complex number as `{re, im}` in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue<T> {
    pub re: T,
    pub im: T,
}

impl<T: Real> From<Complex<T>> for Eigenvalue<T> {
    fn from(z: Complex<T>) -> Self {
        Self { re: z.re, im: z.im }
    }
}

/// One Laplacian mode of a homogeneous PI law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport<T> {
    pub lambda: T,
    pub class: StabilityClass,
    pub roots: Vec<Eigenvalue<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport<T> {
    pub classification: StabilityClass,
    /// Largest real part of the deflated spectrum; `-inf` (serialised as null) when empty.
    pub margin: T,
    /// `a_crit = b gamma` for the double-integrator PI law.
    pub boundary: Option<T>,
    pub per_mode: Vec<ModeReport<T>>,
    pub spectrum: Vec<Eigenvalue<T>>,
}

fn max_re<T: Real>(z: &[Complex<T>]) -> T {
    z.iter().map(|z| z.re).fold(T::neg_infinity(), T::max)
}

fn tol<T: Real>() -> T {
    T::lit(DEFAULT_MARGINAL_TOL)
}

/// `[[0, I], [-a L, -b L - delta I]]` on the `[z, x]` layout.
pub fn assemble_pi_single<T: Real>(graph: &Graph<T>, a: T, b: T, delta: T) -> Matrix<T> {
    let n = graph.n();
    let l = graph.laplacian(true);
    let mut m = Matrix::zeros(2 * n, 2 * n);
    m.set_block(0, n, &Matrix::identity(n));
    m.set_block(n, 0, &l.scale(-a));
    m.set_block(n, n, &(&l.scale(-b) - &Matrix::identity(n).scale(delta)));
    m
}

/// `[[0, I, 0], [0, 0, I], [-a L, -b L - delta I, -gamma I]]` on the `[z, x, v]` layout.
pub fn assemble_pi_double<T: Real>(graph: &Graph<T>, a: T, b: T, gamma: T, delta: T) -> Matrix<T> {
    let n = graph.n();
    let l = graph.laplacian(true);
    let id = Matrix::identity(n);
    let mut m = Matrix::zeros(3 * n, 3 * n);
    m.set_block(0, n, &id);
    m.set_block(n, 2 * n, &id);
    m.set_block(2 * n, 0, &l.scale(-a));
    m.set_block(2 * n, n, &(&l.scale(-b) - &id.scale(delta)));
    m.set_block(2 * n, 2 * n, &id.scale(-gamma));
    m
}

/// Restricts `a` to the disagreement subspace of every `n`-block (`T^T A T` with
/// `T = diag(S, .., S)`) and returns its eigenvalues.
///
/// The disagreement subspace is invariant for the PI matrices because `L S = S (S^T L S)`,
/// so the result is exactly the non-consensus part of the spectrum.
pub fn deflate_and_spectrum<T: Real>(a: &Matrix<T>, kind: ProtocolKind) -> Result<Vec<Complex<T>>, StabilityError> {
    let blocks = match kind {
        ProtocolKind::PiSingle => 2,
        ProtocolKind::PiDouble => 3,
        other => return Err(StabilityError::UnsupportedKind(other)),
    };
    if !a.is_square() || !a.rows().is_multiple_of(blocks) {
        return Err(NumericsError::Dimension(format!("{}x{} matrix for {blocks} blocks", a.rows(), a.cols())).into());
    }
    let n = a.rows() / blocks;
    if n < 2 {
        return Ok(Vec::new());
    }
    let reduced = deflate_blocks(a, n, blocks)?;
    Ok(eigenvalues_general(&reduced)?)
}

fn deflate_blocks<T: Real>(a: &Matrix<T>, n: usize, blocks: usize) -> Result<Matrix<T>, StabilityError> {
    let s = disagreement_basis::<T>(n)?;
    let mut t = Matrix::zeros(blocks * n, blocks * (n - 1));
    for k in 0..blocks {
        t.set_block(k * n, k * (n - 1), &s);
    }
    Ok(t.transpose().matmul(&a.matmul(&t)))
}

/// Nonzero Laplacian eigenvalues of a connected graph, ascending.
fn disagreement_modes<T: Real>(graph: &Graph<T>) -> Result<Vec<T>, StabilityError> {
    if !graph.is_connected() {
        return Err(StabilityError::Disconnected);
    }
    let spectrum = symmetric_eigenvalues(&graph.laplacian(true))?;
    Ok(spectrum.eigenvalues.into_iter().skip(1).collect())
}

fn check_positive<T: Real>(pairs: &[(&str, T)]) -> Result<(), StabilityError> {
    for (name, v) in pairs {
        if !(*v > T::zero()) || !v.is_finite() {
            return Err(StabilityError::InvalidGains(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

fn combine_routes<T: Real>(
    per_mode: Vec<ModeReport<T>>,
    spectrum: Vec<Complex<T>>,
    boundary: Option<T>,
) -> Result<StabilityReport<T>, StabilityError> {
    let analytic = per_mode.iter().map(|m| m.class).fold(StabilityClass::Hurwitz, StabilityClass::worst);
    let margin = max_re(&spectrum);
    let spectral = if spectrum.is_empty() { StabilityClass::Hurwitz } else { classify_margin(margin, tol()) };
    if analytic != spectral {
        return Err(StabilityError::RouteDisagreement { analytic, spectral, margin: margin.to_f64_lossy() });
    }
    Ok(StabilityReport {
        classification: analytic,
        margin,
        boundary,
        per_mode,
        spectrum: spectrum.into_iter().map(Eigenvalue::from).collect(),
    })
}

/// Per mode `s^2 + lambda b s + lambda a`; Hurwitz for every `a, b > 0`.
pub fn classify_pi_single<T: Real>(graph: &Graph<T>, a: T, b: T) -> Result<StabilityReport<T>, StabilityError> {
    check_positive(&[("b", b)])?;
    if a < T::zero() {
        return Err(StabilityError::InvalidGains(format!("a must be non-negative, got {a}")));
    }
    let modes = disagreement_modes(graph)?;
    let per_mode = modes
        .iter()
        .map(|&lambda| {
            let p = Polynomial2::new(T::one(), lambda * b, lambda * a);
            ModeReport {
                lambda,
                class: routh_hurwitz_2(&p, tol()).class,
                roots: quadratic_roots(&p).into_iter().map(Eigenvalue::from).collect(),
            }
        })
        .collect();
    let spectrum = deflate_and_spectrum(&assemble_pi_single(graph, a, b, T::zero()), ProtocolKind::PiSingle)?;
    combine_routes(per_mode, spectrum, None)
}

/// Per mode `s^3 + gamma s^2 + lambda b s + lambda a`; Hurwitz iff `a < b gamma`.
pub fn classify_pi_double<T: Real>(graph: &Graph<T>, a: T, b: T, gamma: T) -> Result<StabilityReport<T>, StabilityError> {
    check_positive(&[("b", b), ("gamma", gamma)])?;
    if a < T::zero() {
        return Err(StabilityError::InvalidGains(format!("a must be non-negative, got {a}")));
    }
    let modes = disagreement_modes(graph)?;
    let per_mode = modes
        .iter()
        .map(|&lambda| {
            let p = Polynomial3::new(T::one(), gamma, lambda * b, lambda * a);
            ModeReport {
                lambda,
                class: routh_hurwitz_3(&p, tol()).class,
                roots: cubic_roots(&p).into_iter().map(Eigenvalue::from).collect(),
            }
        })
        .collect();
    let spectrum = deflate_and_spectrum(&assemble_pi_double(graph, a, b, gamma, T::zero()), ProtocolKind::PiDouble)?;
    combine_routes(per_mode, spectrum, Some(b * gamma))
}

/// Spectral margin of the deflated double-integrator PI matrix.
pub fn pi_double_margin<T: Real>(graph: &Graph<T>, a: T, b: T, gamma: T) -> Result<T, StabilityError> {
    let spectrum = deflate_and_spectrum(&assemble_pi_double(graph, a, b, gamma, T::zero()), ProtocolKind::PiDouble)?;
    Ok(max_re(&spectrum))
}

/// Locates the stability boundary in `a` by bisecting the sign of the spectral margin on
/// `[0, 3 b gamma]`. Returns `None` if the margin does not change sign on that interval.
pub fn bisect_pi_double_boundary<T: Real>(
    graph: &Graph<T>,
    b: T,
    gamma: T,
    rel_tol: T,
) -> Result<Option<T>, StabilityError> {
    let (mut lo, mut hi) = (T::zero(), T::lit(3.0) * b * gamma);
    // At a = 0 the margin is exactly 0 (a zero root per mode); start just inside.
    lo = lo.max(hi * T::lit(1e-6));
    if pi_double_margin(graph, lo, b, gamma)? >= T::zero() || pi_double_margin(graph, hi, b, gamma)? <= T::zero() {
        return Ok(None);
    }
    let width = rel_tol * b * gamma;
    while hi - lo > width {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if pi_double_margin(graph, mid, b, gamma)? < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some((lo + hi) / T::lit(2.0)))
}

/// Reduced centralized frequency-control matrix on `[omega_hat, delta'', omega]`, with the
/// unobservable mean phase removed.
pub fn assemble_power_centralized(net: &PowerNetwork, a: f64, b: f64) -> Result<Matrix<f64>, StabilityError> {
    let n = net.n();
    let l = net.laplacian_k();
    let minv: Vec<f64> = net.buses().iter().map(|bus| 1.0 / bus.m).collect();
    let s = disagreement_basis::<f64>(n)?;
    let dim = 2 * n;
    let (dd, w) = (1, n);
    let mut m = Matrix::zeros(dim, dim);
    for j in 0..n {
        m[(0, w + j)] = -b / n as f64;
    }
    m.set_block(dd, w, &s.transpose());
    let ls = l.matmul(&s);
    for i in 0..n {
        m[(w + i, 0)] = a * minv[i];
        for j in 0..n - 1 {
            m[(w + i, dd + j)] = -minv[i] * ls[(i, j)];
        }
        m[(w + i, w + i)] = -minv[i] * (net.buses()[i].d + a);
    }
    Ok(m)
}

/// Decentralized frequency-control matrix `[[0, I], [-M L_k - b M, -M D - a M]]`.
pub fn assemble_power_decentralized(net: &PowerNetwork, a: f64, b: f64) -> Matrix<f64> {
    let n = net.n();
    let l = net.laplacian_k();
    let mut m = Matrix::zeros(2 * n, 2 * n);
    m.set_block(0, n, &Matrix::identity(n));
    for i in 0..n {
        let bus = &net.buses()[i];
        for j in 0..n {
            m[(n + i, j)] = -l[(i, j)] / bus.m;
        }
        m[(n + i, i)] -= b / bus.m;
        m[(n + i, n + i)] = -(bus.d + a) / bus.m;
    }
    m
}

fn spectral_report(a: &Matrix<f64>) -> Result<StabilityReport<f64>, StabilityError> {
    let spectrum = eigenvalues_general(a)?;
    let margin = max_re(&spectrum);
    Ok(StabilityReport {
        classification: classify_margin(margin, DEFAULT_MARGINAL_TOL),
        margin,
        boundary: None,
        per_mode: Vec::new(),
        spectrum: spectrum.into_iter().map(Eigenvalue::from).collect(),
    })
}

pub fn classify_power_centralized(net: &PowerNetwork, a: f64, b: f64) -> Result<StabilityReport<f64>, StabilityError> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(StabilityError::InvalidGains(format!("need a, b >= 0 (got a={a}, b={b})")));
    }
    spectral_report(&assemble_power_centralized(net, a, b)?)
}

pub fn classify_power_decentralized(net: &PowerNetwork, a: f64, b: f64) -> Result<StabilityReport<f64>, StabilityError> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(StabilityError::InvalidGains(format!("need a, b >= 0 (got a={a}, b={b})")));
    }
    spectral_report(&assemble_power_decentralized(net, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::{Bus, Line};

    fn sorted(mut z: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        z.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        z
    }

    #[test]
    fn pi_single_trivial_graph_is_jordan_block() {
        let g = Graph::<f64>::new(1, vec![]).unwrap();
        let m = assemble_pi_single(&g, 1.0, 1.0, 0.0);
        assert_eq!(m, Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]));
    }

    #[test]
    fn pi_single_edge_spectrum() {
        let g = Graph::<f64>::path(2);
        let full = sorted(eigenvalues_general(&assemble_pi_single(&g, 1.0, 1.0, 0.0)).unwrap());
        // {0, 0} and s^2 + 2 s + 2 = 0 -> -1 +- i
        let expected = [(-1.0, -1.0), (-1.0, 1.0), (0.0, 0.0), (0.0, 0.0)];
        for (z, (re, im)) in full.iter().zip(expected) {
            assert!((z.re - re).abs() < 1e-7 && (z.im - im).abs() < 1e-7, "{z}");
        }
        let reduced = sorted(deflate_and_spectrum(&assemble_pi_single(&g, 1.0, 1.0, 0.0), ProtocolKind::PiSingle).unwrap());
        assert_eq!(reduced.len(), 2);
        for (z, im) in reduced.iter().zip([-1.0, 1.0]) {
            assert!((z.re + 1.0).abs() < 1e-12 && (z.im - im).abs() < 1e-12);
        }
    }

    #[test]
    fn pi_single_trace() {
        let g = Graph::<f64>::star(4);
        let (b, delta) = (0.7, 0.3);
        let m = assemble_pi_single(&g, 2.0, b, delta);
        let expected = -b * g.laplacian(true).trace() - 4.0 * delta;
        assert!((m.trace() - expected).abs() < 1e-12);
    }

    #[test]
    fn pi_double_single_vertex() {
        let g = Graph::<f64>::new(1, vec![]).unwrap();
        let z = sorted(eigenvalues_general(&assemble_pi_double(&g, 1.0, 5.0, 3.0, 0.0)).unwrap());
        assert!((z[0].re + 3.0).abs() < 1e-10);
        assert!(z[1].norm() < 1e-6 && z[2].norm() < 1e-6);
        assert!(deflate_and_spectrum(&assemble_pi_double(&g, 1.0, 5.0, 3.0, 0.0), ProtocolKind::PiDouble)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn robots_gains() {
        let g = Graph::<f64>::path(5);
        let r = classify_pi_double(&g, 1.0, 5.0, 3.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
        assert_eq!(r.boundary, Some(15.0));
        assert!(r.spectrum.iter().all(|z| z.re < 0.0));
        let r = classify_pi_double(&g, 15.0, 5.0, 3.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Marginal);
        assert!(r.margin.abs() < 1e-6);
        let r = classify_pi_double(&g, 20.0, 5.0, 3.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Unstable);
        assert!(r.spectrum.iter().any(|z| z.re > 0.0));
    }

    #[test]
    fn pi_single_always_hurwitz() {
        let r = classify_pi_single(&Graph::<f64>::path(3), 2.0, 0.1).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
        let r = classify_pi_single(&Graph::<f64>::complete(4), 1.0, 1.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
        // P3 modes are 1 and 3; lambda = 3 gives s^2 + 3 s + 3.
        let r = classify_pi_single(&Graph::<f64>::path(3), 1.0, 1.0).unwrap();
        let m3 = r.per_mode.iter().find(|m| (m.lambda - 3.0).abs() < 1e-9).unwrap();
        assert!(m3.roots.iter().all(|z| (z.re + 1.5).abs() < 1e-12));
    }

    #[test]
    fn disconnected_rejected() {
        let g = Graph::<f64>::new(3, vec![(0, 1)]).unwrap();
        assert_eq!(classify_pi_single(&g, 1.0, 1.0), Err(StabilityError::Disconnected));
        assert_eq!(classify_pi_double(&g, 1.0, 1.0, 1.0), Err(StabilityError::Disconnected));
    }

    #[test]
    fn spectral_margin_matches_analytic_margin() {
        let g = Graph::<f64>::ring(6);
        for a in [0.5, 4.0, 9.0, 30.0] {
            let r = classify_pi_double(&g, a, 2.0, 3.0).unwrap();
            let analytic = r.per_mode.iter().flat_map(|m| m.roots.iter().map(|z| z.re)).fold(f64::MIN, f64::max);
            assert!((analytic - r.margin).abs() < 1e-6, "a={a}: {analytic} vs {}", r.margin);
        }
    }

    #[test]
    fn boundary_bisection() {
        let g = Graph::<f64>::path(5);
        let a = bisect_pi_double_boundary(&g, 5.0, 3.0, 1e-8).unwrap().unwrap();
        assert!((a - 15.0).abs() < 1e-6 * 15.0, "{a}");
    }

    fn net(m: [f64; 2], d: [f64; 2], k: f64) -> PowerNetwork {
        let buses = (0..2).map(|i| Bus { m: m[i], d: d[i], p_m: 0.0, v_mag: 1.0 }).collect();
        PowerNetwork::new(buses, vec![Line { i: 0, j: 1, susceptance: k }]).unwrap()
    }

    #[test]
    fn power_decentralized_two_bus() {
        let r = classify_power_decentralized(&net([1.0; 2], [1.0; 2], 1.0), 1.0, 1.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
        // s^2 + 2 s + (lambda + 1) for lambda in {0, 2}: a double root at -1 and -1 +- i sqrt(2)
        let mut im: Vec<f64> = r.spectrum.iter().map(|z| z.im.abs()).collect();
        im.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(im[0] < 1e-6 && im[1] < 1e-6, "{im:?}");
        assert!((im[2] - 2f64.sqrt()).abs() < 1e-10 && (im[3] - 2f64.sqrt()).abs() < 1e-10);
        assert!(r.spectrum.iter().all(|z| (z.re + 1.0).abs() < 1e-6));
        let r = classify_power_decentralized(&net([1.0; 2], [1.0; 2], 1.0), 1.0, 0.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Marginal);
    }

    #[test]
    fn power_decentralized_heterogeneous_and_trace() {
        let n = net([1.0, 10.0], [1.0, 2.0], 1.0);
        let r = classify_power_decentralized(&n, 0.5, 0.5).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
        let sum: f64 = r.spectrum.iter().map(|z| z.re).sum();
        let trace = -(1.0 + 0.5) / 1.0 - (2.0 + 0.5) / 10.0;
        assert!((sum - trace).abs() < 1e-6);
    }

    #[test]
    fn power_centralized_two_bus() {
        let n = net([1.0; 2], [1.0; 2], 1.0);
        let a = assemble_power_centralized(&n, 1.0, 1.0).unwrap();
        assert_eq!(a.rows(), 4);
        let r = classify_power_centralized(&n, 1.0, 1.0).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
        let r = classify_power_centralized(&net([1.0, 10.0], [1.0, 2.0], 3.0), 0.8, 0.04).unwrap();
        assert_eq!(r.classification, StabilityClass::Hurwitz);
    }
}
