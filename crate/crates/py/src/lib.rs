//! Python bindings for the radar point-enhancement toolkit.
//!
//! Thin wrappers over the core types and operations: grids, scenes, the
//! imaging operator, the diffusion prior, solvers, and metrics. Build the
//! cdylib and import it as `rinv_py` (see `python/smoke_test.py`).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rinv_core::codec::Codec;
use rinv_core::diffusion::{self, DenoiserArch, SamplerMode, TrainConfig};
use rinv_core::error::Error;
use rinv_core::forward;
use rinv_core::grid;
use rinv_core::io as fio;
use rinv_core::metrics;
use rinv_core::nn::{self, DenoiserModel, NoisePredictor};
use rinv_core::scene;
use rinv_core::schedule::{self, ScheduleKind};
use rinv_core::solvers::{self, GradMode, PosteriorConfig, RegConfig, RegNorm};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_codec(name: &str) -> PyResult<Codec> {
    match name {
        "identity" => Ok(Codec::Identity),
        "pool2" => Ok(Codec::Pool2),
        other => Err(PyValueError::new_err(format!("unknown codec '{other}'"))),
    }
}

fn parse_mode(name: &str) -> PyResult<SamplerMode> {
    match name {
        "ddim" => Ok(SamplerMode::Ddim),
        "ancestral" => Ok(SamplerMode::Ancestral),
        other => Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    }
}

#[pyclass(name = "PolarGrid", from_py_object)]
#[derive(Clone)]
struct PyPolarGrid {
    inner: grid::PolarGrid,
}

#[pymethods]
impl PyPolarGrid {
    #[new]
    #[pyo3(signature = (n_az, n_rng, az_min_deg=-90.0, az_max_deg=90.0, rng_max_m=103.0))]
    fn new(
        n_az: usize,
        n_rng: usize,
        az_min_deg: f64,
        az_max_deg: f64,
        rng_max_m: f64,
    ) -> PyResult<Self> {
        let inner = grid::make_grid(n_az, n_rng, az_min_deg, az_max_deg, rng_max_m)
            .map_err(to_py)?;
        Ok(PyPolarGrid { inner })
    }

    #[getter]
    fn n_az(&self) -> usize {
        self.inner.n_az
    }

    #[getter]
    fn n_rng(&self) -> usize {
        self.inner.n_rng
    }

    fn az_center_deg(&self, i: usize) -> f64 {
        self.inner.az_center_deg(i)
    }

    fn rng_center_m(&self, j: usize) -> f64 {
        self.inner.rng_center_m(j)
    }

    fn __repr__(&self) -> String {
        format!(
            "PolarGrid({}x{}, az [{}, {}] deg, range [0, {}] m)",
            self.inner.n_az,
            self.inner.n_rng,
            self.inner.az_min_deg,
            self.inner.az_max_deg,
            self.inner.rng_max_m
        )
    }
}

#[pyclass(name = "SceneMask", from_py_object)]
#[derive(Clone)]
struct PySceneMask {
    inner: grid::SceneMask,
}

#[pymethods]
impl PySceneMask {
    #[getter]
    fn grid(&self) -> PyPolarGrid {
        PyPolarGrid {
            inner: self.inner.grid.clone(),
        }
    }

    /// Row-major values, azimuth outer.
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner
            .values
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    fn occupied_fraction(&self) -> f64 {
        self.inner.occupied_fraction()
    }

    fn to_points(&self, threshold: f64) -> Vec<(f64, f64)> {
        grid::mask_to_points(&self.inner, threshold).points
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        fio::write_scene_mask(&path, &self.inner).map_err(to_py)
    }
}

#[pyclass(name = "Heatmap", from_py_object)]
#[derive(Clone)]
struct PyHeatmap {
    inner: forward::Heatmap,
}

#[pymethods]
impl PyHeatmap {
    /// Magnitude values (magnitude-mode heatmaps only).
    fn values(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .inner
            .magnitude_values()
            .map_err(to_py)?
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        if self.inner.is_magnitude() {
            fio::write_magnitude_heatmap(&path, &self.inner).map_err(to_py)
        } else {
            fio::write_complex_heatmap(&path, &self.inner).map_err(to_py)
        }
    }
}

#[pyclass(name = "AntennaArray", from_py_object)]
#[derive(Clone)]
struct PyAntennaArray {
    inner: forward::AntennaArray,
}

#[pymethods]
impl PyAntennaArray {
    #[new]
    #[pyo3(signature = (n_antennas, spacing_over_lambda=0.5))]
    fn new(n_antennas: usize, spacing_over_lambda: f64) -> PyResult<Self> {
        Ok(PyAntennaArray {
            inner: forward::AntennaArray::new(n_antennas, spacing_over_lambda).map_err(to_py)?,
        })
    }

    /// Named presets: 1t4r, 3t4r, cascade, ideal12t16r.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(PyAntennaArray {
            inner: forward::AntennaArray::from_preset(name).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_antennas(&self) -> usize {
        self.inner.n_antennas
    }
}

#[pyclass(name = "ImagingMatrix")]
struct PyImagingMatrix {
    inner: forward::ImagingMatrix,
}

#[pyclass(name = "NoiseSchedule", from_py_object)]
#[derive(Clone)]
struct PyNoiseSchedule {
    inner: schedule::NoiseSchedule,
}

#[pymethods]
impl PyNoiseSchedule {
    #[new]
    #[pyo3(signature = (t=200, beta_min=1e-4, beta_max=0.1))]
    fn new(t: usize, beta_min: f64, beta_max: f64) -> PyResult<Self> {
        Ok(PyNoiseSchedule {
            inner: schedule::make_schedule(t, beta_min, beta_max, ScheduleKind::Linear)
                .map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.inner.alpha_bar_t(t).map_err(to_py)
    }
}

#[pyclass(name = "Denoiser")]
struct PyDenoiser {
    inner: DenoiserModel,
}

#[pymethods]
impl PyDenoiser {
    #[getter]
    fn latent_dims(&self) -> (usize, usize) {
        self.inner.latent_dims()
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.arch_descriptor()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_checkpoint(&path, &self.inner).map_err(to_py)
    }
}

#[pyclass(name = "SceneSpec", from_py_object)]
#[derive(Clone)]
struct PySceneSpec {
    inner: scene::SceneSpec,
}

#[pymethods]
impl PySceneSpec {
    #[new]
    #[pyo3(signature = (seed=0, n_walls=2, n_point_targets=3, wall_length_range_m=(5.0, 20.0), clutter_density=0.001))]
    fn new(
        seed: u64,
        n_walls: usize,
        n_point_targets: usize,
        wall_length_range_m: (f64, f64),
        clutter_density: f64,
    ) -> Self {
        PySceneSpec {
            inner: scene::SceneSpec {
                seed,
                n_walls,
                n_point_targets,
                wall_length_range_m,
                clutter_density,
            },
        }
    }
}

#[pyfunction]
fn generate_scene(spec: &PySceneSpec, grid_: &PyPolarGrid) -> PyResult<PySceneMask> {
    Ok(PySceneMask {
        inner: scene::generate_scene(&spec.inner, &grid_.inner).map_err(to_py)?,
    })
}

#[pyfunction]
fn load_mask(path: PathBuf) -> PyResult<PySceneMask> {
    Ok(PySceneMask {
        inner: fio::read_scene_mask(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn load_heatmap(path: PathBuf) -> PyResult<PyHeatmap> {
    Ok(PyHeatmap {
        inner: fio::read_magnitude_heatmap(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn load_denoiser(path: PathBuf) -> PyResult<PyDenoiser> {
    Ok(PyDenoiser {
        inner: nn::load_checkpoint(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn points_to_mask(points: Vec<(f64, f64)>, grid_: &PyPolarGrid) -> (PySceneMask, usize) {
    let (mask, dropped) =
        grid::points_to_mask(&grid::PointSet::new(points), &grid_.inner);
    (PySceneMask { inner: mask }, dropped)
}

#[pyfunction]
fn build_imaging_matrix(grid_: &PyPolarGrid, array: &PyAntennaArray) -> PyImagingMatrix {
    PyImagingMatrix {
        inner: forward::build_imaging_matrix(&grid_.inner, &array.inner),
    }
}

/// Forward-measure a scene and return the normalized magnitude heatmap.
#[pyfunction]
#[pyo3(signature = (mask, b, noise_sigma=0.0, seed=0, normalize=true))]
fn simulate(
    mask: &PySceneMask,
    b: &PyImagingMatrix,
    noise_sigma: f64,
    seed: u64,
    normalize: bool,
) -> PyResult<PyHeatmap> {
    let complex = forward::forward_measure(&mask.inner, &b.inner, noise_sigma, seed)
        .map_err(to_py)?;
    Ok(PyHeatmap {
        inner: forward::to_magnitude(&complex, normalize).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (scenes, sched, codec="identity", epochs=30, batch=16, lr=1e-4, seed=0, arch="dense"))]
#[allow(clippy::too_many_arguments)]
fn train_denoiser(
    scenes: Vec<PySceneMask>,
    sched: &PyNoiseSchedule,
    codec: &str,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
    arch: &str,
) -> PyResult<(PyDenoiser, Vec<(usize, f64)>)> {
    let arch = match arch {
        "dense" => DenoiserArch::Dense,
        "conv" => DenoiserArch::Conv,
        other => return Err(PyValueError::new_err(format!("unknown arch '{other}'"))),
    };
    let masks: Vec<grid::SceneMask> = scenes.into_iter().map(|s| s.inner).collect();
    let cfg = TrainConfig {
        epochs,
        batch,
        lr,
        seed,
        arch,
    };
    let (model, trace) =
        diffusion::train_denoiser(&masks, parse_codec(codec)?, &sched.inner, &cfg)
            .map_err(to_py)?;
    Ok((PyDenoiser { inner: model }, trace))
}

#[pyfunction]
#[pyo3(signature = (denoiser, sched, grid_, codec="identity", seed=0, mode="ddim"))]
fn sample_unconditional(
    denoiser: &PyDenoiser,
    sched: &PyNoiseSchedule,
    grid_: &PyPolarGrid,
    codec: &str,
    seed: u64,
    mode: &str,
) -> PyResult<PySceneMask> {
    let values = diffusion::sample_unconditional(
        &denoiser.inner,
        &sched.inner,
        parse_codec(codec)?,
        seed,
        parse_mode(mode)?,
    )
    .map_err(to_py)?;
    Ok(PySceneMask {
        inner: diffusion::values_to_mask(&grid_.inner, values).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (y, b, denoiser, sched, codec="identity", zeta=0.001, gamma=1.0, k=20,
                    lambda_diff=None, t_steps=None, mode="ddim", grad_mode="exact",
                    early_stop_frac=1.0, seed=0, gt=None))]
#[allow(clippy::too_many_arguments)]
fn posterior_sample(
    y: &PyHeatmap,
    b: &PyImagingMatrix,
    denoiser: &PyDenoiser,
    sched: &PyNoiseSchedule,
    codec: &str,
    zeta: f64,
    gamma: f64,
    k: usize,
    lambda_diff: Option<f64>,
    t_steps: Option<usize>,
    mode: &str,
    grad_mode: &str,
    early_stop_frac: f64,
    seed: u64,
    gt: Option<Vec<(f64, f64)>>,
) -> PyResult<(PySceneMask, Vec<(usize, f64, Option<f64>)>)> {
    let grad_mode = match grad_mode {
        "exact" => GradMode::Exact,
        "passthrough" => GradMode::Passthrough,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown grad_mode '{other}'"
            )))
        }
    };
    let cfg = PosteriorConfig {
        zeta,
        gamma,
        k_meas: k,
        lambda_diff,
        t_steps,
        mode: parse_mode(mode)?,
        grad_mode,
        early_stop_frac,
        eps_mag: 1e-6,
        seed,
    };
    let gt_points = gt.map(grid::PointSet::new);
    let (mask, trace) = solvers::posterior_sample(
        &y.inner,
        &b.inner,
        &denoiser.inner,
        parse_codec(codec)?,
        &sched.inner,
        &cfg,
        gt_points.as_ref(),
    )
    .map_err(to_py)?;
    let trace = trace
        .into_iter()
        .map(|r| (r.step, r.fidelity, r.cd))
        .collect();
    Ok((PySceneMask { inner: mask }, trace))
}

#[pyfunction]
#[pyo3(signature = (y, b, norm="l1", reg_weight=0.1, step_size=1e-5, iters=2000))]
fn solve_regularized(
    y: &PyHeatmap,
    b: &PyImagingMatrix,
    norm: &str,
    reg_weight: f64,
    step_size: f64,
    iters: usize,
) -> PyResult<PySceneMask> {
    let norm = match norm {
        "l1" => RegNorm::L1,
        "l2" => RegNorm::L2,
        other => return Err(PyValueError::new_err(format!("unknown norm '{other}'"))),
    };
    let cfg = RegConfig {
        norm,
        reg_weight,
        step_size,
        iters,
        seed: 0,
        random_init: false,
    };
    Ok(PySceneMask {
        inner: solvers::solve_regularized(&y.inner, &b.inner, &cfg, y.inner.grid())
            .map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (y, guard=(2, 2), train=(8, 8), threshold_factor=3.0))]
fn cfar_detect(
    y: &PyHeatmap,
    guard: (usize, usize),
    train: (usize, usize),
    threshold_factor: f64,
) -> PyResult<PySceneMask> {
    let cfg = solvers::CfarConfig {
        guard_cells: guard,
        train_cells: train,
        threshold_factor,
    };
    Ok(PySceneMask {
        inner: solvers::cfar_detect(&y.inner, &cfg).map_err(to_py)?,
    })
}

/// CD/UCD/MHD/UMHD between two point lists, as a dict.
#[pyfunction]
fn compute_metrics(
    py: Python<'_>,
    pred: Vec<(f64, f64)>,
    gt: Vec<(f64, f64)>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let report = metrics::compute_metrics(
        &grid::PointSet::new(pred),
        &grid::PointSet::new(gt),
    )
    .map_err(to_py)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("cd", report.cd)?;
    dict.set_item("ucd", report.ucd)?;
    dict.set_item("mhd", report.mhd)?;
    dict.set_item("umhd", report.umhd)?;
    dict.set_item("n_pred", report.n_pred)?;
    dict.set_item("n_gt", report.n_gt)?;
    Ok(dict.unbind())
}

#[pymodule]
fn rinv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolarGrid>()?;
    m.add_class::<PySceneSpec>()?;
    m.add_class::<PySceneMask>()?;
    m.add_class::<PyHeatmap>()?;
    m.add_class::<PyAntennaArray>()?;
    m.add_class::<PyImagingMatrix>()?;
    m.add_class::<PyNoiseSchedule>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(load_mask, m)?)?;
    m.add_function(wrap_pyfunction!(load_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(load_denoiser, m)?)?;
    m.add_function(wrap_pyfunction!(points_to_mask, m)?)?;
    m.add_function(wrap_pyfunction!(build_imaging_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train_denoiser, m)?)?;
    m.add_function(wrap_pyfunction!(sample_unconditional, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_sample, m)?)?;
    m.add_function(wrap_pyfunction!(solve_regularized, m)?)?;
    m.add_function(wrap_pyfunction!(cfar_detect, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    Ok(())
}
