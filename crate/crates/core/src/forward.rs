//! Radar measurement forward operator: steering vectors, matched-filter
//! imaging, noise injection, adjoint, and fidelity gradients.
//!
//! Each range bin is ideally gated, so the operator factorizes per range
//! column: `Y[:, r] = B · x[:, r] + H[:, r]` with `B` the azimuth imaging
//! matrix. Angles follow the array convention `θ = 90° − φ` (θ measured from
//! the array axis, φ from the forward axis), so `cos θ = sin φ`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{PolarGrid, SceneMask};

/// Uniform linear antenna array. Only the spacing ratio `d/λ` enters the
/// phase model; amplitude is normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaArray {
    pub n_antennas: usize,
    pub spacing_over_lambda: f64,
}

impl AntennaArray {
    pub fn new(n_antennas: usize, spacing_over_lambda: f64) -> Result<AntennaArray> {
        if n_antennas < 2 {
            return Err(Error::config(
                "n_antennas",
                format!("must be >= 2, got {n_antennas}"),
            ));
        }
        if !(spacing_over_lambda > 0.0 && spacing_over_lambda <= 0.5) {
            return Err(Error::config(
                "spacing_over_lambda",
                format!("must be in (0, 0.5], got {spacing_over_lambda}"),
            ));
        }
        Ok(AntennaArray {
            n_antennas,
            spacing_over_lambda,
        })
    }

    /// Half-wavelength array with `n` elements.
    pub fn half_lambda(n: usize) -> Result<AntennaArray> {
        AntennaArray::new(n, 0.5)
    }

    /// Named hardware presets: `1t4r` (4), `3t4r` (12), `cascade` (86),
    /// `ideal12t16r` (192).
    pub fn from_preset(name: &str) -> Result<AntennaArray> {
        let n = match name {
            "1t4r" => 4,
            "3t4r" => 12,
            "cascade" => 86,
            "ideal12t16r" => 192,
            other => {
                return Err(Error::config(
                    "array",
                    format!("unknown preset '{other}' (expected 1t4r, 3t4r, cascade, ideal12t16r)"),
                ))
            }
        };
        AntennaArray::half_lambda(n)
    }
}

/// Per-antenna phase response of a plane wave from array-convention angle θ:
/// entry `k = exp(−j·2π·k·(d/λ)·cos θ)`; entry 0 is exactly 1.
pub fn steering_vector(theta_deg: f64, array: &AntennaArray) -> Array1<Complex64> {
    let step = -2.0 * std::f64::consts::PI * array.spacing_over_lambda * theta_deg.to_radians().cos();
    Array1::from_iter((0..array.n_antennas).map(|k| {
        if k == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, step * k as f64)
        }
    }))
}

/// Precomputed steering responses for every azimuth bin of a grid;
/// `s[k, i]` is antenna `k`'s response to bin `i`.
#[derive(Debug, Clone)]
pub struct SteeringTensor {
    pub array: AntennaArray,
    pub grid: PolarGrid,
    pub s: Array2<Complex64>,
}

impl SteeringTensor {
    pub fn build(grid: &PolarGrid, array: &AntennaArray) -> SteeringTensor {
        let n = array.n_antennas;
        let mut s = Array2::zeros((n, grid.n_az));
        for i in 0..grid.n_az {
            // Forward-referenced φ to array-referenced θ.
            let theta_deg = 90.0 - grid.az_center_deg(i);
            let col = steering_vector(theta_deg, array);
            for k in 0..n {
                s[[k, i]] = col[k];
            }
        }
        SteeringTensor {
            array: array.clone(),
            grid: grid.clone(),
            s,
        }
    }
}

/// Azimuth imaging matrix `B = Sᴴ·S` (matched-filter bank applied to the
/// steering tensor): `B[a, i] = Σ_k conj(S[k, a])·S[k, i]`, with `B[a, a] = N`.
#[derive(Debug, Clone)]
pub struct ImagingMatrix {
    pub grid: PolarGrid,
    pub array: AntennaArray,
    pub b: Array2<Complex64>,
}

pub fn build_imaging_matrix(grid: &PolarGrid, array: &AntennaArray) -> ImagingMatrix {
    let st = SteeringTensor::build(grid, array);
    let sh = st.s.map(|z| z.conj()).reversed_axes();
    let b = sh.dot(&st.s);
    ImagingMatrix {
        grid: grid.clone(),
        array: array.clone(),
        b,
    }
}

/// Range–azimuth measurement. Complex mode carries the raw antenna-summed
/// signal; magnitude mode holds nonnegative reals (normalized heatmaps have
/// max 1 unless all-zero).
#[derive(Debug, Clone)]
pub enum Heatmap {
    Complex { grid: PolarGrid, values: Array2<Complex64> },
    Magnitude { grid: PolarGrid, values: Array2<f64> },
}

impl Heatmap {
    pub fn grid(&self) -> &PolarGrid {
        match self {
            Heatmap::Complex { grid, .. } => grid,
            Heatmap::Magnitude { grid, .. } => grid,
        }
    }

    pub fn is_magnitude(&self) -> bool {
        matches!(self, Heatmap::Magnitude { .. })
    }

    pub fn magnitude_values(&self) -> Result<&Array2<f64>> {
        match self {
            Heatmap::Magnitude { values, .. } => Ok(values),
            Heatmap::Complex { .. } => Err(Error::Invalid(
                "expected a magnitude-mode heatmap".into(),
            )),
        }
    }

    pub fn complex_values(&self) -> Result<&Array2<Complex64>> {
        match self {
            Heatmap::Complex { values, .. } => Ok(values),
            Heatmap::Magnitude { .. } => Err(Error::Invalid(
                "expected a complex-mode heatmap".into(),
            )),
        }
    }
}

fn check_grid(b: &ImagingMatrix, grid: &PolarGrid, context: &'static str) -> Result<()> {
    if b.grid != *grid {
        return Err(Error::GridMismatch {
            expected: b.grid.dims(),
            got: grid.dims(),
            context,
        });
    }
    Ok(())
}

/// Exact linear operator `A(x)` applied column-wise: `out[:, r] = B·x[:, r]`.
pub fn apply_forward(x: &Array2<f64>, b: &ImagingMatrix) -> Array2<Complex64> {
    let (n_az, n_rng) = x.dim();
    let cols: Vec<Vec<Complex64>> = (0..n_rng)
        .into_par_iter()
        .map(|r| {
            (0..n_az)
                .map(|a| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..n_az {
                        acc += b.b[[a, i]] * x[[i, r]];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n_az, n_rng));
    for (r, col) in cols.into_iter().enumerate() {
        for (a, v) in col.into_iter().enumerate() {
            out[[a, r]] = v;
        }
    }
    out
}

/// Adjoint applied column-wise: `out[:, r] = Bᴴ·y[:, r]`.
pub fn apply_adjoint(y: &Array2<Complex64>, b: &ImagingMatrix) -> Array2<Complex64> {
    let (n_az, n_rng) = y.dim();
    let cols: Vec<Vec<Complex64>> = (0..n_rng)
        .into_par_iter()
        .map(|r| {
            (0..n_az)
                .map(|i| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a in 0..n_az {
                        acc += b.b[[a, i]].conj() * y[[a, r]];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n_az, n_rng));
    for (r, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            out[[i, r]] = v;
        }
    }
    out
}

/// Simulates a measurement: `Y = A(x) + H` with `H` circular complex Gaussian
/// noise, std `noise_sigma/√2` per real/imaginary component. `noise_sigma = 0`
/// yields the exact operator.
pub fn forward_measure(
    mask: &SceneMask,
    b: &ImagingMatrix,
    noise_sigma: f64,
    seed: u64,
) -> Result<Heatmap> {
    check_grid(b, &mask.grid, "forward_measure")?;
    let mut values = apply_forward(&mask.values, b);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comp = noise_sigma / std::f64::consts::SQRT_2;
        for v in values.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(comp * re, comp * im);
        }
    }
    Ok(Heatmap::Complex {
        grid: mask.grid.clone(),
        values,
    })
}

/// Entrywise modulus; optionally scaled so the max is exactly 1.
pub fn to_magnitude(hm: &Heatmap, normalize: bool) -> Result<Heatmap> {
    let values = hm.complex_values()?;
    let mut mag = values.map(|z| z.norm());
    if normalize {
        let max = mag.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            mag.mapv_inplace(|v| v / max);
        }
    }
    Ok(Heatmap::Magnitude {
        grid: hm.grid().clone(),
        values: mag,
    })
}

/// `Bᴴ·Y` per range column.
pub fn adjoint_apply(hm: &Heatmap, b: &ImagingMatrix) -> Result<Array2<Complex64>> {
    check_grid(b, hm.grid(), "adjoint_apply")?;
    Ok(apply_adjoint(hm.complex_values()?, b))
}

/// Residual-mode selector for [`fidelity_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FidelityMode {
    /// Residual `γY − A(x)` with complex `Y`.
    Complex,
    /// Residual `γY − √(|A(x)|² + ε²)` with real nonnegative `Y`.
    Magnitude,
}

/// Gradient of `L(x) = ‖γY − A(x)‖²` with respect to the real mask values,
/// computed on raw values (no [0, 1] projection). In magnitude mode the
/// modulus is smoothed by `eps_mag` to stay differentiable at 0.
pub fn fidelity_gradient_values(
    x: &Array2<f64>,
    y: &Heatmap,
    gamma: f64,
    b: &ImagingMatrix,
    mode: FidelityMode,
    eps_mag: f64,
) -> Result<Array2<f64>> {
    if x.dim() != b.grid.dims() {
        return Err(Error::GridMismatch {
            expected: b.grid.dims(),
            got: x.dim(),
            context: "fidelity_gradient",
        });
    }
    check_grid(b, y.grid(), "fidelity_gradient")?;
    let ax = apply_forward(x, b);
    fidelity_gradient_from_forward(&ax, y, gamma, b, mode, eps_mag)
}

/// Gradient given a precomputed `A(x)`; shared with the samplers so one
/// forward pass serves both the fidelity value and its gradient.
pub(crate) fn fidelity_gradient_from_forward(
    ax: &Array2<Complex64>,
    y: &Heatmap,
    gamma: f64,
    b: &ImagingMatrix,
    mode: FidelityMode,
    eps_mag: f64,
) -> Result<Array2<f64>> {
    match mode {
        FidelityMode::Complex => {
            let yv = y.complex_values()?;
            let resid = ndarray::Zip::from(ax)
                .and(yv)
                .map_collect(|a, yy| a - gamma * yy);
            let back = apply_adjoint(&resid, b);
            Ok(back.map(|z| 2.0 * z.re))
        }
        FidelityMode::Magnitude => {
            if !(eps_mag > 0.0) {
                return Err(Error::Invalid(format!(
                    "eps_mag must be > 0 in magnitude mode, got {eps_mag}"
                )));
            }
            let yv = y.magnitude_values()?;
            let weighted = ndarray::Zip::from(ax)
                .and(yv)
                .map_collect(|u, yy| {
                    let m = (u.norm_sqr() + eps_mag * eps_mag).sqrt();
                    ((gamma * yy - m) / m) * u
                });
            let back = apply_adjoint(&weighted, b);
            Ok(back.map(|z| -2.0 * z.re))
        }
    }
}

/// [`fidelity_gradient_values`] over a [`SceneMask`].
pub fn fidelity_gradient(
    mask: &SceneMask,
    y: &Heatmap,
    gamma: f64,
    b: &ImagingMatrix,
    mode: FidelityMode,
    eps_mag: f64,
) -> Result<Array2<f64>> {
    fidelity_gradient_values(&mask.values, y, gamma, b, mode, eps_mag)
}

/// Fidelity value `‖γY − A(x)‖²` matching [`fidelity_gradient_values`].
pub fn fidelity_value(
    x: &Array2<f64>,
    y: &Heatmap,
    gamma: f64,
    b: &ImagingMatrix,
    mode: FidelityMode,
    eps_mag: f64,
) -> Result<f64> {
    let ax = apply_forward(x, b);
    fidelity_value_from_forward(&ax, y, gamma, mode, eps_mag)
}

pub(crate) fn fidelity_value_from_forward(
    ax: &Array2<Complex64>,
    y: &Heatmap,
    gamma: f64,
    mode: FidelityMode,
    eps_mag: f64,
) -> Result<f64> {
    match mode {
        FidelityMode::Complex => {
            let yv = y.complex_values()?;
            Ok(ndarray::Zip::from(ax)
                .and(yv)
                .fold(0.0, |acc, a, yy| acc + (gamma * yy - a).norm_sqr()))
        }
        FidelityMode::Magnitude => {
            let yv = y.magnitude_values()?;
            Ok(ndarray::Zip::from(ax)
                .and(yv)
                .fold(0.0, |acc, u, yy| {
                    let m = (u.norm_sqr() + eps_mag * eps_mag).sqrt();
                    let d = gamma * yy - m;
                    acc + d * d
                }))
        }
    }
}

/// Continuous magnitude beam response of a matched filter pointed at `phi0`
/// and evaluated at `phi` (both forward-referenced, degrees).
pub fn beam_response(array: &AntennaArray, phi0_deg: f64, phi_deg: f64) -> f64 {
    // cos θ = sin φ under θ = 90° − φ.
    let d = array.spacing_over_lambda;
    let delta = phi_deg.to_radians().sin() - phi0_deg.to_radians().sin();
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..array.n_antennas {
        acc += Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 * d * delta);
    }
    acc.norm()
}

/// Half-power (−3 dB) width of the azimuth mainlobe around `phi0`, in
/// degrees, measured on the continuous array response by bisection.
pub fn half_power_beamwidth_deg(array: &AntennaArray, phi0_deg: f64) -> f64 {
    let peak = array.n_antennas as f64;
    let target = peak / std::f64::consts::SQRT_2;
    let side = |dir: f64| -> f64 {
        // Walk outward until the response dips below target, then bisect.
        let mut step = 1e-4;
        let mut prev = 0.0;
        loop {
            let phi = phi0_deg + dir * step;
            if beam_response(array, phi0_deg, phi) < target || step > 180.0 {
                break;
            }
            prev = step;
            step *= 2.0;
        }
        let (mut lo, mut hi) = (prev, step);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if beam_response(array, phi0_deg, phi0_deg + dir * mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    side(1.0) + side(-1.0)
}

/// Count of interior local maxima above `floor` in a 1-D profile. A run of
/// equal values counts as one maximum (symmetric peaks can land exactly
/// between two bins).
pub fn count_local_maxima(profile: &[f64], floor: f64) -> usize {
    let n = profile.len();
    let mut count = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && profile[j + 1] == profile[i] {
            j += 1;
        }
        if profile[i] > floor
            && i > 0
            && j + 1 < n
            && profile[i - 1] < profile[i]
            && profile[j + 1] < profile[i]
        {
            count += 1;
        }
        i = j + 1;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand::Rng;

    fn random_mask(grid: &PolarGrid, seed: u64) -> SceneMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SceneMask::zeros(grid.clone());
        m.values.mapv_inplace(|_| rng.random::<f64>());
        m
    }

    fn random_complex(dims: (usize, usize), seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(dims, |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        let arr = AntennaArray::half_lambda(4).unwrap();
        let s = steering_vector(90.0, &arr);
        for k in 0..4 {
            assert!((s[k] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_endfire_alternates_sign() {
        let arr = AntennaArray::half_lambda(4).unwrap();
        let s = steering_vector(0.0, &arr);
        let want = [1.0, -1.0, 1.0, -1.0];
        for k in 0..4 {
            assert!((s[k] - Complex64::new(want[k], 0.0)).norm() < 1e-12, "k={k}: {}", s[k]);
        }
    }

    #[test]
    fn steering_sixty_degrees_quarter_turns() {
        // 2π·0.5·cos 60° = π/2 per element: [1, −j, −1, j].
        let arr = AntennaArray::half_lambda(4).unwrap();
        let s = steering_vector(60.0, &arr);
        let want = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        for k in 0..4 {
            assert!((s[k] - want[k]).norm() < 1e-12, "k={k}: {}", s[k]);
        }
    }

    #[test]
    fn steering_entries_unit_modulus_first_entry_one() {
        let arr = AntennaArray::half_lambda(12).unwrap();
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let st = SteeringTensor::build(&grid, &arr);
        for i in 0..grid.n_az {
            assert_eq!(st.s[[0, i]], Complex64::new(1.0, 0.0));
            for k in 0..12 {
                assert!((st.s[[k, i]].norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn imaging_matrix_diagonal_is_antenna_count() {
        let arr = AntennaArray::half_lambda(12).unwrap();
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        for a in 0..grid.n_az {
            assert!((b.b[[a, a]] - Complex64::new(12.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn single_antenna_imaging_matrix_is_all_ones() {
        // N = 1 is below the array invariant, so build the value directly:
        // one antenna has no angular discrimination.
        let arr = AntennaArray {
            n_antennas: 1,
            spacing_over_lambda: 0.5,
        };
        let grid = make_grid(8, 4, -90.0, 90.0, 50.0).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        for a in 0..8 {
            for i in 0..8 {
                assert!((b.b[[a, i]] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn imaging_matrix_matches_double_loop_oracle() {
        let arr = AntennaArray::half_lambda(4).unwrap();
        let grid = make_grid(8, 4, -90.0, 90.0, 50.0).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        for a in 0..8 {
            for i in 0..8 {
                let mut want = Complex64::new(0.0, 0.0);
                for k in 0..4 {
                    let pa = -2.0 * std::f64::consts::PI * k as f64 * 0.5
                        * (90.0 - grid.az_center_deg(a)).to_radians().cos();
                    let pi_ = -2.0 * std::f64::consts::PI * k as f64 * 0.5
                        * (90.0 - grid.az_center_deg(i)).to_radians().cos();
                    want += Complex64::from_polar(1.0, pa).conj() * Complex64::from_polar(1.0, pi_);
                }
                assert!(
                    (b.b[[a, i]] - want).norm() <= 1e-12,
                    "B[{a},{i}] = {} want {}",
                    b.b[[a, i]],
                    want
                );
            }
        }
    }

    #[test]
    fn zero_mask_measures_zero() {
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let arr = AntennaArray::half_lambda(4).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        let hm = forward_measure(&SceneMask::zeros(grid), &b, 0.0, 0).unwrap();
        let v = hm.complex_values().unwrap();
        assert!(v.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_cell_reads_out_matrix_column() {
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let arr = AntennaArray::half_lambda(12).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        let (i0, r0) = (5, 3);
        let mut mask = SceneMask::zeros(grid.clone());
        mask.values[[i0, r0]] = 1.0;
        let hm = forward_measure(&mask, &b, 0.0, 0).unwrap();
        let v = hm.complex_values().unwrap();
        let mut peak_at = 0;
        let mut peak = 0.0;
        for a in 0..grid.n_az {
            assert!((v[[a, r0]] - b.b[[a, i0]]).norm() < 1e-12);
            if v[[a, r0]].norm() > peak {
                peak = v[[a, r0]].norm();
                peak_at = a;
            }
        }
        assert_eq!(peak_at, i0);
        assert!((peak - 12.0).abs() < 1e-10);
        // Other columns stay empty.
        for r in 0..grid.n_rng {
            if r != r0 {
                for a in 0..grid.n_az {
                    assert_eq!(v[[a, r]], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn operator_is_linear() {
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let arr = AntennaArray::half_lambda(4).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        let x1 = random_mask(&grid, 1);
        let x2 = random_mask(&grid, 2);
        let (a_coef, b_coef) = (0.37, -1.25);
        let combo = &x1.values * a_coef + &x2.values * b_coef;
        let lhs = apply_forward(&combo, &b);
        let rhs = apply_forward(&x1.values, &b).mapv(|z| z * a_coef)
            + apply_forward(&x2.values, &b).mapv(|z| z * b_coef);
        let err = ndarray::Zip::from(&lhs)
            .and(&rhs)
            .fold(0.0f64, |m, l, r| m.max((l - r).norm()));
        assert!(err <= 1e-12, "superposition error {err}");
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let arr = AntennaArray::half_lambda(4).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        let mask = SceneMask::zeros(grid);
        let a = forward_measure(&mask, &b, 0.1, 7).unwrap();
        let bb = forward_measure(&mask, &b, 0.1, 7).unwrap();
        let c = forward_measure(&mask, &b, 0.1, 8).unwrap();
        assert_eq!(a.complex_values().unwrap(), bb.complex_values().unwrap());
        assert_ne!(a.complex_values().unwrap(), c.complex_values().unwrap());
    }

    #[test]
    fn magnitude_conversion_and_normalization() {
        let grid = make_grid(2, 2, -90.0, 90.0, 10.0).unwrap();
        let mut values = Array2::zeros((2, 2));
        values[[0, 0]] = Complex64::new(3.0, 4.0);
        let hm = Heatmap::Complex { grid: grid.clone(), values };
        let mag = to_magnitude(&hm, false).unwrap();
        assert_eq!(mag.magnitude_values().unwrap()[[0, 0]], 5.0);
        let norm = to_magnitude(&hm, true).unwrap();
        assert_eq!(norm.magnitude_values().unwrap()[[0, 0]], 1.0);
        // All-zero input stays all-zero (no division).
        let zero = Heatmap::Complex { grid, values: Array2::zeros((2, 2)) };
        let z = to_magnitude(&zero, true).unwrap();
        assert!(z.magnitude_values().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalized_magnitude_peaks_at_exactly_one() {
        let grid = make_grid(16, 8, -90.0, 90.0, 50.0).unwrap();
        let hm = Heatmap::Complex {
            grid,
            values: random_complex((16, 8), 3),
        };
        let mag = to_magnitude(&hm, true).unwrap();
        let max = mag
            .magnitude_values()
            .unwrap()
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn scalar_adjoint_conjugates() {
        let grid = make_grid(2, 2, -90.0, 90.0, 10.0).unwrap();
        let arr = AntennaArray::half_lambda(2).unwrap();
        let mut b = build_imaging_matrix(&grid, &arr);
        // Overwrite with the 1x1-style toy on the (0,0) entry: B = [2].
        b.b = Array2::from_elem((2, 2), Complex64::new(0.0, 0.0));
        b.b[[0, 0]] = Complex64::new(2.0, 0.0);
        let mut y = Array2::zeros((2, 2));
        y[[0, 0]] = Complex64::new(1.0, 1.0);
        let hm = Heatmap::Complex { grid, values: y };
        let out = adjoint_apply(&hm, &b).unwrap();
        assert!((out[[0, 0]] - Complex64::new(2.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn adjoint_identity_holds() {
        let grid = make_grid(64, 96, -90.0, 90.0, 103.0).unwrap();
        let arr = AntennaArray::half_lambda(12).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        for trial in 0..20 {
            let x = random_mask(&grid, 100 + trial);
            let y = random_complex(grid.dims(), 200 + trial);
            let ax = apply_forward(&x.values, &b);
            let aty = apply_adjoint(&y, &b);
            // <Ax, y> with <u, v> = Σ conj(u)·v; x is real.
            let lhs: Complex64 = ndarray::Zip::from(&ax)
                .and(&y)
                .fold(Complex64::new(0.0, 0.0), |acc, a, yy| acc + a.conj() * yy);
            let rhs: Complex64 = ndarray::Zip::from(&x.values)
                .and(&aty)
                .fold(Complex64::new(0.0, 0.0), |acc, xv, av| acc + xv * av);
            let ax_norm = ax.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let y_norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let rel = (lhs - rhs).norm() / (ax_norm * y_norm);
            assert!(rel <= 1e-10, "trial {trial}: relative defect {rel}");
        }
    }

    #[test]
    fn complex_gradient_zero_at_exact_fit() {
        let grid = make_grid(8, 4, -90.0, 90.0, 50.0).unwrap();
        let arr = AntennaArray::half_lambda(4).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        let x = random_mask(&grid, 5);
        let gamma = 0.7;
        let y = Heatmap::Complex {
            grid: grid.clone(),
            values: apply_forward(&x.values, &b).mapv(|z| z / gamma),
        };
        let g = fidelity_gradient(&x, &y, gamma, &b, FidelityMode::Complex, 1e-6).unwrap();
        let max = g.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-9, "gradient at exact fit {max}");
    }

    #[test]
    fn scalar_gradient_hand_value() {
        // 1x1 toy embedded at (0,0): B = [2], x = 1, γY = 1 → gradient 4.
        let grid = make_grid(2, 2, -90.0, 90.0, 10.0).unwrap();
        let arr = AntennaArray::half_lambda(2).unwrap();
        let mut b = build_imaging_matrix(&grid, &arr);
        b.b = Array2::zeros((2, 2));
        b.b[[0, 0]] = Complex64::new(2.0, 0.0);
        let mut x = SceneMask::zeros(grid.clone());
        x.values[[0, 0]] = 1.0;
        let mut yv = Array2::zeros((2, 2));
        yv[[0, 0]] = Complex64::new(1.0, 0.0);
        let y = Heatmap::Complex { grid, values: yv };
        let g = fidelity_gradient(&x, &y, 1.0, &b, FidelityMode::Complex, 1e-6).unwrap();
        assert!((g[[0, 0]] - 4.0).abs() < 1e-12, "got {}", g[[0, 0]]);
    }

    fn finite_difference_check(mode: FidelityMode, seed: u64) {
        let grid = make_grid(16, 24, -90.0, 90.0, 60.0).unwrap();
        let arr = AntennaArray::half_lambda(12).unwrap();
        let b = build_imaging_matrix(&grid, &arr);
        let x = random_mask(&grid, seed);
        let gamma = 0.9;
        let eps_mag = 1e-6;
        let y = match mode {
            FidelityMode::Complex => Heatmap::Complex {
                grid: grid.clone(),
                values: random_complex(grid.dims(), seed + 1),
            },
            FidelityMode::Magnitude => {
                let raw = random_complex(grid.dims(), seed + 1).map(|z| z.norm());
                Heatmap::Magnitude { grid: grid.clone(), values: raw }
            }
        };
        let g = fidelity_gradient(&x, &y, gamma, &b, mode, eps_mag).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let h = 1e-5;
        for _ in 0..50 {
            let i = rng.random_range(0..grid.n_az);
            let j = rng.random_range(0..grid.n_rng);
            let mut xp = x.values.clone();
            let mut xm = x.values.clone();
            xp[[i, j]] += h;
            xm[[i, j]] -= h;
            let lp = fidelity_value(&xp, &y, gamma, &b, mode, eps_mag).unwrap();
            let lm = fidelity_value(&xm, &y, gamma, &b, mode, eps_mag).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let a = g[[i, j]];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-4, "({i},{j}): analytic {a} vs fd {fd}, rel {rel}");
        }
    }

    #[test]
    fn complex_gradient_matches_finite_differences() {
        finite_difference_check(FidelityMode::Complex, 11);
    }

    #[test]
    fn magnitude_gradient_matches_finite_differences() {
        finite_difference_check(FidelityMode::Magnitude, 13);
    }

    #[test]
    fn beamwidth_shrinks_with_aperture() {
        let widths: Vec<f64> = [4usize, 12, 86, 192]
            .iter()
            .map(|&n| half_power_beamwidth_deg(&AntennaArray::half_lambda(n).unwrap(), 0.0))
            .collect();
        for w in widths.windows(2) {
            assert!(w[0] > w[1], "widths not strictly decreasing: {widths:?}");
        }
    }

    #[test]
    fn rayleigh_pair_resolved_only_by_large_array() {
        // Two targets split by Δcosθ = 1/6 at one range.
        let grid = make_grid(512, 4, -90.0, 90.0, 50.0).unwrap();
        let want = [(4usize, 1usize), (192, 2)];
        // sin φ = ±1/12.
        let phi = (1.0f64 / 12.0).asin().to_degrees();
        let i_hi = grid
            .bin_index(50.0 * 0.4 * phi.to_radians().sin(), 50.0 * 0.4 * phi.to_radians().cos())
            .unwrap()
            .0;
        let i_lo = grid
            .bin_index(-(50.0 * 0.4) * phi.to_radians().sin(), 50.0 * 0.4 * phi.to_radians().cos())
            .unwrap()
            .0;
        for (n, expect) in want {
            let arr = AntennaArray::half_lambda(n).unwrap();
            let b = build_imaging_matrix(&grid, &arr);
            let mut mask = SceneMask::zeros(grid.clone());
            mask.values[[i_lo, 1]] = 1.0;
            mask.values[[i_hi, 1]] = 1.0;
            let hm = forward_measure(&mask, &b, 0.0, 0).unwrap();
            let profile: Vec<f64> = (0..grid.n_az)
                .map(|a| hm.complex_values().unwrap()[[a, 1]].norm())
                .collect();
            let peak = profile.iter().cloned().fold(0.0f64, f64::max);
            let got = count_local_maxima(&profile, 0.5 * peak);
            assert_eq!(got, expect, "N={n}: {got} maxima");
        }
    }
}
