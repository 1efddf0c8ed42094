//! Regularized matting system `(L + λD) α = λ D S` and its PCG solver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cf::{build_cf_laplacian, CfParams};
use crate::error::{Error, Result};
use crate::knn::{build_features, build_knn_laplacian, knn_graph, KnnParams};
use crate::sparse::SparseSymMatrix;
use crate::trimap::{binary_constraints, hu_calibrated_constraints, HuCalibration, SoftConstraint, Trimap};
use crate::volume::{clamp_window, AlphaMatte, Unit, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_rel_residual: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
    pub clamp_output: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_rel_residual: 1e-7,
            max_iterations: 2000,
            preconditioner: Preconditioner::Jacobi,
            clamp_output: true,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol_rel_residual > 0.0 && self.tol_rel_residual < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {} must lie in (0, 1)",
                self.tol_rel_residual
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_rel_residual: f64,
    pub converged: bool,
    pub wall_time_s: f64,
}

/// `A = L + λD`, `b = λ D S`.
pub fn assemble_system(l: &SparseSymMatrix, c: &SoftConstraint) -> Result<(SparseSymMatrix, Vec<f64>)> {
    let n = l.n();
    if c.s_values.len() != n || c.constrained.len() != n {
        return Err(Error::Shape(format!(
            "constraints of length {} for an operator of size {n}",
            c.s_values.len()
        )));
    }
    let diag: Vec<f64> = c
        .constrained
        .iter()
        .map(|&on| if on { c.lambda } else { 0.0 })
        .collect();
    let b = c
        .s_values
        .iter()
        .zip(&c.constrained)
        .map(|(&s, &on)| if on { c.lambda * s } else { 0.0 })
        .collect();
    Ok((l.add_diagonal(&diag)?, b))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual(a: &SparseSymMatrix, x: &[f64], b: &[f64], r: &mut [f64]) {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Preconditioned conjugate gradient from `x₀ = 0`.
///
/// Stops when `‖b − Ax‖₂ / ‖b‖₂ ≤ tol` (checked on the true residual) or at
/// `max_iterations`. A zero right-hand side returns the zero vector.
/// Reductions are serial, so results are independent of the thread count.
pub fn pcg_solve(a: &SparseSymMatrix, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    let start = Instant::now();
    let n = a.n();
    if b.len() != n {
        return Err(Error::Shape(format!("rhs of length {} for n={n}", b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite right-hand side".into()));
    }
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                final_rel_residual: 0.0,
                converged: true,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let inv_diag: Vec<f64> = match opts.preconditioner {
        Preconditioner::Jacobi => a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
        Preconditioner::None => vec![1.0; n],
    };
    let precondition = |r: &[f64], z: &mut [f64]| {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&inv_diag) {
            *zi = ri * di;
        }
    };

    let tol = opts.tol_rel_residual;
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::NumericalBreakdown(format!(
                "search direction curvature {pap} at iteration {iterations}"
            )));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        iterations += 1;
        rel = norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "residual became non-finite at iteration {iterations}"
            )));
        }
        if rel <= tol {
            // confirm against the true residual before stopping
            true_residual(a, &x, b, &mut r);
            rel = norm(&r) / b_norm;
            if rel <= tol {
                converged = true;
                break;
            }
            precondition(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if !converged {
        true_residual(a, &x, b, &mut r);
        rel = norm(&r) / b_norm;
        converged = rel <= tol;
    }
    Ok((
        x,
        SolveReport {
            iterations,
            final_rel_residual: rel,
            converged,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cf,
    Knn,
}

impl Method {
    pub fn name(&self, calibrated: bool) -> &'static str {
        match (self, calibrated) {
            (Method::Cf, false) => "cf",
            (Method::Cf, true) => "cf+",
            (Method::Knn, false) => "knn",
            (Method::Knn, true) => "knn+",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" => Ok(Method::Cf),
            "knn" => Ok(Method::Knn),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Everything `solve_alpha` needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MattingParams {
    pub cf: CfParams,
    pub knn: KnnParams,
    /// HU window used to normalize intensities and to calibrate constraints.
    pub window: (f64, f64),
    pub lambda: f64,
}

impl Default for MattingParams {
    fn default() -> Self {
        MattingParams {
            cf: CfParams::default(),
            knn: KnnParams::default(),
            window: crate::volume::LUNG_WINDOW,
            lambda: crate::trimap::DEFAULT_LAMBDA,
        }
    }
}

/// Normalized intensities for Laplacian construction: HU volumes are windowed,
/// normalized volumes pass through.
pub fn feature_volume(vol: &VolumeGrid, window: (f64, f64)) -> Result<VolumeGrid> {
    match vol.unit {
        Unit::Hu => clamp_window(vol, window.0, window.1),
        Unit::Normalized => Ok(vol.clone()),
    }
}

/// The matting Laplacian of `method` over a normalized volume.
pub fn build_laplacian(normalized: &VolumeGrid, method: Method, params: &MattingParams) -> Result<SparseSymMatrix> {
    match method {
        Method::Cf => build_cf_laplacian(normalized, &params.cf),
        Method::Knn => {
            let f = build_features(normalized, params.knn.spatial_weight);
            let nn = knn_graph(&f, params.knn.k_neighbors)?;
            build_knn_laplacian(&f, &nn)
        }
    }
}

/// Binary constraints, or HU-calibrated ones when `calibrated`.
pub fn build_constraints(
    vol: &VolumeGrid,
    trimap: &Trimap,
    calibrated: bool,
    params: &MattingParams,
) -> Result<SoftConstraint> {
    if calibrated {
        let calib = HuCalibration::from_window(params.window.0, params.window.1)?;
        hu_calibrated_constraints(vol, trimap, &calib, params.lambda)
    } else {
        binary_constraints(trimap, params.lambda)
    }
}

/// Solves for the matte given a prebuilt Laplacian and constraints.
/// Returns the raw (unclamped) solution alongside the matte.
pub fn solve_with_laplacian(
    l: &SparseSymMatrix,
    constraints: &SoftConstraint,
    geom: crate::volume::Geometry,
    opts: &SolveOptions,
) -> Result<(AlphaMatte, Vec<f64>, SolveReport)> {
    if constraints.constrained_count() == 0 {
        return Err(Error::SingularSystem(
            "no constrained voxels: the Laplacian alone is singular".into(),
        ));
    }
    let (a, b) = assemble_system(l, constraints)?;
    let (x, report) = pcg_solve(&a, &b, opts)?;
    let matte = if opts.clamp_output {
        AlphaMatte::from_unclamped(geom, &x)?
    } else {
        AlphaMatte::new(geom, x.iter().map(|&v| v as f32).collect())?
    };
    Ok((matte, x, report))
}

/// End-to-end matting of one volume: constraints, Laplacian, solve, clamp.
///
/// `vol` must be in HU when `calibrated`; otherwise HU volumes are windowed
/// and normalized volumes are used directly.
pub fn solve_alpha(
    vol: &VolumeGrid,
    trimap: &Trimap,
    method: Method,
    calibrated: bool,
    params: &MattingParams,
    opts: &SolveOptions,
) -> Result<(AlphaMatte, SolveReport)> {
    vol.geom.ensure_same(&trimap.geom, "volume and trimap")?;
    if calibrated && vol.unit != Unit::Hu {
        return Err(Error::InvalidArgument(
            "calibrated matting requires a volume in HU".into(),
        ));
    }
    let constraints = build_constraints(vol, trimap, calibrated, params)?;
    let normalized = feature_volume(vol, params.window)?;
    let l = build_laplacian(&normalized, method, params)?;
    let (matte, _, report) = solve_with_laplacian(&l, &constraints, vol.geom, opts)?;
    Ok((matte, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trimap::Label;
    use crate::volume::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> SparseSymMatrix {
        SparseSymMatrix::from_rows(vec![
            vec![(0, 1.0), (1, -1.0)],
            vec![(0, -1.0), (1, 2.0), (2, -1.0)],
            vec![(1, -1.0), (2, 1.0)],
        ])
        .unwrap()
    }

    fn chain_constraints() -> SoftConstraint {
        SoftConstraint {
            s_values: vec![1.0, 0.0, 0.0],
            constrained: vec![true, false, true],
            lambda: 100.0,
        }
    }

    #[test]
    fn empty_constraints_leave_laplacian() {
        let c = SoftConstraint {
            s_values: vec![0.0; 3],
            constrained: vec![false; 3],
            lambda: 100.0,
        };
        let (a, b) = assemble_system(&chain(), &c).unwrap();
        assert_eq!(a.to_dense(), chain().to_dense());
        assert_eq!(b, vec![0.0; 3]);
        let geom = Geometry::new([3, 1, 1], [1.0; 3]).unwrap();
        assert!(matches!(
            solve_with_laplacian(&chain(), &c, geom, &SolveOptions::default()),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn pure_constraints_recover_targets() {
        let s = vec![0.25, 1.0, 0.0, 0.6];
        let c = SoftConstraint {
            s_values: s.clone(),
            constrained: vec![true; 4],
            lambda: 100.0,
        };
        let (a, b) = assemble_system(&SparseSymMatrix::zeros(4), &c).unwrap();
        let (x, report) = pcg_solve(&a, &b, &SolveOptions::default()).unwrap();
        assert_eq!(x, s);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn chain_middle_is_half() {
        let (a, b) = assemble_system(&chain(), &chain_constraints()).unwrap();
        let (x, report) = pcg_solve(&a, &b, &SolveOptions::default()).unwrap();
        // symmetric system: x1 = 1 - x3 and x2 = (x1 + x3)/2
        assert!((x[1] - 0.5).abs() <= 1e-6);
        assert!(report.converged && report.final_rel_residual <= 1e-7);
        // closed form: x1 = (λ + 1)/(λ + 2)·... reduce to (101·x1 − x2 = 100, x2 = 1/2)
        assert!((x[0] - 100.5 / 101.0).abs() <= 1e-9);
    }

    #[test]
    fn identity_system_one_iteration() {
        let b = vec![3.0, -1.0, 0.5, 7.0];
        let (x, report) = pcg_solve(&SparseSymMatrix::identity(4), &b, &SolveOptions::default()).unwrap();
        assert_eq!(x, b);
        assert_eq!(report.iterations, 1);
        let opts = SolveOptions {
            preconditioner: Preconditioner::None,
            ..Default::default()
        };
        let (x, _) = pcg_solve(&SparseSymMatrix::identity(4), &b, &opts).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn breakdown_on_indefinite_and_nan() {
        let neg = SparseSymMatrix::from_rows(vec![vec![(0, -1.0)]]).unwrap();
        let opts = SolveOptions {
            preconditioner: Preconditioner::None,
            ..Default::default()
        };
        assert!(matches!(pcg_solve(&neg, &[1.0], &opts), Err(Error::NumericalBreakdown(_))));
        assert!(matches!(
            pcg_solve(&SparseSymMatrix::identity(1), &[f64::NAN], &opts),
            Err(Error::NumericalBreakdown(_))
        ));
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, 2.0 + rng.random::<f64>())];
                if i > 0 {
                    row.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    row.push((i + 1, -1.0));
                }
                row
            })
            .collect();
        let a = SparseSymMatrix::from_rows(rows).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let opts = SolveOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let (_, report) = pcg_solve(&a, &b, &opts).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 2);
        assert!(report.final_rel_residual > 1e-7);
    }

    #[test]
    fn fully_constrained_trimap() {
        let geom = Geometry::cube(4, 1.0);
        let vol = VolumeGrid::from_fn(geom, Unit::Hu, |x, _, _| if x < 2 { -800.0 } else { 0.0 }).unwrap();
        let labels = (0..geom.len())
            .map(|i| if geom.coords(i)[0] < 2 { Label::Background } else { Label::Foreground })
            .collect();
        let t = Trimap::new(geom, labels).unwrap();
        let (matte, report) = solve_alpha(&vol, &t, Method::Cf, false, &MattingParams::default(), &SolveOptions::default()).unwrap();
        assert!(report.converged);
        for i in 0..geom.len() {
            let s = if t.labels[i] == Label::Foreground { 1.0 } else { 0.0 };
            assert!((matte.values[i] as f64 - s).abs() <= 1e-2);
        }
    }

    #[test]
    fn method_names() {
        assert_eq!("KNN".parse::<Method>().unwrap(), Method::Knn);
        assert!("lb".parse::<Method>().is_err());
        assert_eq!(Method::Cf.name(true), "cf+");
    }
}
