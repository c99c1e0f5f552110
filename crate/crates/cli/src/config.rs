//! Run configuration: a strict JSON document with exactly these top-level
//! sections, all optional: `grid`, `array`, `noise`, `schedule`, `posterior`,
//! `regularized`, `cfar`, `io`. Unknown keys are rejected at every level and
//! every violation in the document is reported in one aggregated error, so a
//! bad config never half-runs.

use serde_json::{Map, Value};

use rinv_core::codec::Codec;
use rinv_core::diffusion::{DenoiserArch, SamplerMode, TrainConfig};
use rinv_core::error::{Error, Result};
use rinv_core::forward::AntennaArray;
use rinv_core::grid::{make_grid, PolarGrid};
use rinv_core::scene::SceneSpec;
use rinv_core::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use rinv_core::solvers::{CfarConfig, GradMode, PosteriorConfig, RegConfig, RegNorm};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_az: usize,
    pub n_rng: usize,
    pub az_min_deg: f64,
    pub az_max_deg: f64,
    pub rng_max_m: f64,
    pub scene_walls: usize,
    pub scene_targets: usize,
    pub scene_wall_min_m: f64,
    pub scene_wall_max_m: f64,
    pub scene_clutter: f64,
    pub array_preset: Option<String>,
    pub n_antennas: Option<usize>,
    pub spacing_over_lambda: f64,
    pub noise_sigma: f64,
    pub sched_t: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub codec: Codec,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub train_arch: DenoiserArch,
    pub zeta: f64,
    pub gamma: f64,
    pub k_meas: usize,
    pub lambda_diff: Option<f64>,
    pub t_steps: Option<usize>,
    pub mode: SamplerMode,
    pub grad_mode: GradMode,
    pub early_stop_frac: f64,
    pub eps_mag: f64,
    pub reg_norm: RegNorm,
    pub reg_weight: f64,
    pub reg_step: f64,
    pub reg_iters: usize,
    pub cfar_guard: (usize, usize),
    pub cfar_train: (usize, usize),
    pub cfar_factor: f64,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_az: 64,
            n_rng: 96,
            az_min_deg: -90.0,
            az_max_deg: 90.0,
            rng_max_m: 103.0,
            scene_walls: 2,
            scene_targets: 3,
            scene_wall_min_m: 5.0,
            scene_wall_max_m: 20.0,
            scene_clutter: 0.001,
            array_preset: Some("3t4r".to_string()),
            n_antennas: None,
            spacing_over_lambda: 0.5,
            noise_sigma: 0.01,
            sched_t: 200,
            beta_min: 1e-4,
            beta_max: 0.1,
            codec: Codec::Identity,
            train_epochs: 30,
            train_batch: 16,
            train_lr: 1e-4,
            train_arch: DenoiserArch::Dense,
            zeta: 0.001,
            gamma: 1.0,
            k_meas: 20,
            lambda_diff: None,
            t_steps: None,
            mode: SamplerMode::Ddim,
            grad_mode: GradMode::Exact,
            early_stop_frac: 1.0,
            eps_mag: 1e-6,
            reg_norm: RegNorm::L1,
            reg_weight: 0.1,
            reg_step: 1e-5,
            reg_iters: 2000,
            cfar_guard: (2, 2),
            cfar_train: (8, 8),
            cfar_factor: 3.0,
            threshold: 0.01,
        }
    }
}

/// Collects every violation while walking the document.
struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn object<'a>(&mut self, value: &'a Value, path: &str) -> Option<&'a Map<String, Value>> {
        match value.as_object() {
            Some(m) => Some(m),
            None => {
                self.errors.push(format!("{path}: expected an object"));
                None
            }
        }
    }

    fn reject_unknown(&mut self, map: &Map<String, Value>, path: &str, allowed: &[&str]) {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.errors.push(format!("{path}: unknown key '{key}'"));
            }
        }
    }

    fn f64_field(&mut self, map: &Map<String, Value>, path: &str, key: &str, out: &mut f64) {
        if let Some(v) = map.get(key) {
            match v.as_f64() {
                Some(x) if x.is_finite() => *out = x,
                _ => self.errors.push(format!("{path}.{key}: expected a finite number")),
            }
        }
    }

    fn usize_field(&mut self, map: &Map<String, Value>, path: &str, key: &str, out: &mut usize) {
        if let Some(v) = map.get(key) {
            match v.as_u64() {
                Some(x) => *out = x as usize,
                None => self
                    .errors
                    .push(format!("{path}.{key}: expected a nonnegative integer")),
            }
        }
    }

    fn string_field(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        map.get(key).and_then(|v| match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.errors.push(format!("{path}.{key}: expected a string"));
                None
            }
        })
    }

    fn pair_field(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        key: &str,
        out: &mut (usize, usize),
    ) {
        if let Some(v) = map.get(key) {
            let ok = v
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some((a[0].as_u64()?, a[1].as_u64()?)));
            match ok {
                Some((a, b)) => *out = (a as usize, b as usize),
                None => self
                    .errors
                    .push(format!("{path}.{key}: expected [az, rng] integers")),
            }
        }
    }
}

impl RunConfig {
    /// Parses and validates a JSON document, aggregating every violation.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("config", format!("invalid JSON: {e}")))?;
        let mut cfg = RunConfig::default();
        let mut ck = Checker { errors: Vec::new() };

        if let Some(root) = ck.object(&value, "config") {
            ck.reject_unknown(
                root,
                "config",
                &[
                    "grid",
                    "array",
                    "noise",
                    "schedule",
                    "posterior",
                    "regularized",
                    "cfar",
                    "io",
                ],
            );
            if let Some(v) = root.get("grid") {
                if let Some(m) = ck.object(v, "grid") {
                    ck.reject_unknown(
                        m,
                        "grid",
                        &["n_az", "n_rng", "az_min_deg", "az_max_deg", "rng_max_m", "scene"],
                    );
                    ck.usize_field(m, "grid", "n_az", &mut cfg.n_az);
                    ck.usize_field(m, "grid", "n_rng", &mut cfg.n_rng);
                    ck.f64_field(m, "grid", "az_min_deg", &mut cfg.az_min_deg);
                    ck.f64_field(m, "grid", "az_max_deg", &mut cfg.az_max_deg);
                    ck.f64_field(m, "grid", "rng_max_m", &mut cfg.rng_max_m);
                    if let Some(sv) = m.get("scene") {
                        if let Some(sm) = ck.object(sv, "grid.scene") {
                            ck.reject_unknown(
                                sm,
                                "grid.scene",
                                &[
                                    "n_walls",
                                    "n_point_targets",
                                    "wall_min_m",
                                    "wall_max_m",
                                    "clutter_density",
                                ],
                            );
                            ck.usize_field(sm, "grid.scene", "n_walls", &mut cfg.scene_walls);
                            ck.usize_field(
                                sm,
                                "grid.scene",
                                "n_point_targets",
                                &mut cfg.scene_targets,
                            );
                            ck.f64_field(sm, "grid.scene", "wall_min_m", &mut cfg.scene_wall_min_m);
                            ck.f64_field(sm, "grid.scene", "wall_max_m", &mut cfg.scene_wall_max_m);
                            ck.f64_field(
                                sm,
                                "grid.scene",
                                "clutter_density",
                                &mut cfg.scene_clutter,
                            );
                        }
                    }
                }
            }
            if let Some(v) = root.get("array") {
                if let Some(m) = ck.object(v, "array") {
                    ck.reject_unknown(m, "array", &["preset", "n_antennas", "spacing_over_lambda"]);
                    if let Some(p) = ck.string_field(m, "array", "preset") {
                        cfg.array_preset = Some(p);
                        cfg.n_antennas = None;
                    }
                    if m.contains_key("n_antennas") {
                        let mut n = 0usize;
                        ck.usize_field(m, "array", "n_antennas", &mut n);
                        cfg.n_antennas = Some(n);
                        if !m.contains_key("preset") {
                            cfg.array_preset = None;
                        }
                    }
                    if cfg.array_preset.is_some() && cfg.n_antennas.is_some() {
                        ck.errors
                            .push("array: give either 'preset' or 'n_antennas', not both".into());
                    }
                    ck.f64_field(m, "array", "spacing_over_lambda", &mut cfg.spacing_over_lambda);
                }
            }
            if let Some(v) = root.get("noise") {
                if let Some(m) = ck.object(v, "noise") {
                    ck.reject_unknown(m, "noise", &["sigma"]);
                    ck.f64_field(m, "noise", "sigma", &mut cfg.noise_sigma);
                    if cfg.noise_sigma < 0.0 {
                        ck.errors.push("noise.sigma: must be >= 0".into());
                    }
                }
            }
            if let Some(v) = root.get("schedule") {
                if let Some(m) = ck.object(v, "schedule") {
                    ck.reject_unknown(
                        m,
                        "schedule",
                        &["t", "beta_min", "beta_max", "codec", "epochs", "batch", "lr", "arch"],
                    );
                    ck.usize_field(m, "schedule", "t", &mut cfg.sched_t);
                    ck.f64_field(m, "schedule", "beta_min", &mut cfg.beta_min);
                    ck.f64_field(m, "schedule", "beta_max", &mut cfg.beta_max);
                    ck.usize_field(m, "schedule", "epochs", &mut cfg.train_epochs);
                    ck.usize_field(m, "schedule", "batch", &mut cfg.train_batch);
                    ck.f64_field(m, "schedule", "lr", &mut cfg.train_lr);
                    if let Some(c) = ck.string_field(m, "schedule", "codec") {
                        match c.as_str() {
                            "identity" => cfg.codec = Codec::Identity,
                            "pool2" => cfg.codec = Codec::Pool2,
                            other => ck
                                .errors
                                .push(format!("schedule.codec: unknown codec '{other}'")),
                        }
                    }
                    if let Some(a) = ck.string_field(m, "schedule", "arch") {
                        match a.as_str() {
                            "dense" => cfg.train_arch = DenoiserArch::Dense,
                            "conv" => cfg.train_arch = DenoiserArch::Conv,
                            other => ck
                                .errors
                                .push(format!("schedule.arch: unknown architecture '{other}'")),
                        }
                    }
                }
            }
            if let Some(v) = root.get("posterior") {
                if let Some(m) = ck.object(v, "posterior") {
                    ck.reject_unknown(
                        m,
                        "posterior",
                        &[
                            "zeta",
                            "gamma",
                            "k",
                            "lambda_diff",
                            "t_steps",
                            "mode",
                            "grad_mode",
                            "early_stop_frac",
                            "eps_mag",
                        ],
                    );
                    ck.f64_field(m, "posterior", "zeta", &mut cfg.zeta);
                    ck.f64_field(m, "posterior", "gamma", &mut cfg.gamma);
                    ck.usize_field(m, "posterior", "k", &mut cfg.k_meas);
                    ck.f64_field(m, "posterior", "early_stop_frac", &mut cfg.early_stop_frac);
                    ck.f64_field(m, "posterior", "eps_mag", &mut cfg.eps_mag);
                    match m.get("lambda_diff") {
                        None | Some(Value::Null) => {}
                        Some(v) => match v.as_f64() {
                            Some(x) => cfg.lambda_diff = Some(x),
                            None => ck
                                .errors
                                .push("posterior.lambda_diff: expected a number or null".into()),
                        },
                    }
                    match m.get("t_steps") {
                        None | Some(Value::Null) => {}
                        Some(v) => match v.as_u64() {
                            Some(x) => cfg.t_steps = Some(x as usize),
                            None => ck
                                .errors
                                .push("posterior.t_steps: expected an integer or null".into()),
                        },
                    }
                    if let Some(s) = ck.string_field(m, "posterior", "mode") {
                        match s.as_str() {
                            "ddim" => cfg.mode = SamplerMode::Ddim,
                            "ancestral" => cfg.mode = SamplerMode::Ancestral,
                            other => ck.errors.push(format!("posterior.mode: unknown '{other}'")),
                        }
                    }
                    if let Some(s) = ck.string_field(m, "posterior", "grad_mode") {
                        match s.as_str() {
                            "exact" => cfg.grad_mode = GradMode::Exact,
                            "passthrough" => cfg.grad_mode = GradMode::Passthrough,
                            other => ck
                                .errors
                                .push(format!("posterior.grad_mode: unknown '{other}'")),
                        }
                    }
                }
            }
            if let Some(v) = root.get("regularized") {
                if let Some(m) = ck.object(v, "regularized") {
                    ck.reject_unknown(m, "regularized", &["norm", "reg_weight", "step_size", "iters"]);
                    ck.f64_field(m, "regularized", "reg_weight", &mut cfg.reg_weight);
                    ck.f64_field(m, "regularized", "step_size", &mut cfg.reg_step);
                    ck.usize_field(m, "regularized", "iters", &mut cfg.reg_iters);
                    if let Some(s) = ck.string_field(m, "regularized", "norm") {
                        match s.as_str() {
                            "l1" => cfg.reg_norm = RegNorm::L1,
                            "l2" => cfg.reg_norm = RegNorm::L2,
                            other => ck
                                .errors
                                .push(format!("regularized.norm: unknown '{other}'")),
                        }
                    }
                }
            }
            if let Some(v) = root.get("cfar") {
                if let Some(m) = ck.object(v, "cfar") {
                    ck.reject_unknown(m, "cfar", &["guard", "train", "threshold_factor"]);
                    ck.pair_field(m, "cfar", "guard", &mut cfg.cfar_guard);
                    ck.pair_field(m, "cfar", "train", &mut cfg.cfar_train);
                    ck.f64_field(m, "cfar", "threshold_factor", &mut cfg.cfar_factor);
                }
            }
            if let Some(v) = root.get("io") {
                if let Some(m) = ck.object(v, "io") {
                    ck.reject_unknown(m, "io", &["threshold"]);
                    ck.f64_field(m, "io", "threshold", &mut cfg.threshold);
                    if cfg.threshold < 0.0 {
                        ck.errors.push("io.threshold: must be >= 0".into());
                    }
                }
            }
        }

        if ck.errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::config(
                "config",
                format!("{} violation(s):\n  {}", ck.errors.len(), ck.errors.join("\n  ")),
            ))
        }
    }

    pub fn build_grid(&self) -> Result<PolarGrid> {
        make_grid(
            self.n_az,
            self.n_rng,
            self.az_min_deg,
            self.az_max_deg,
            self.rng_max_m,
        )
    }

    pub fn build_array(&self) -> Result<AntennaArray> {
        match (&self.array_preset, self.n_antennas) {
            (Some(p), _) => AntennaArray::from_preset(p),
            (None, Some(n)) => AntennaArray::new(n, self.spacing_over_lambda),
            (None, None) => AntennaArray::from_preset("3t4r"),
        }
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.sched_t, self.beta_min, self.beta_max, ScheduleKind::Linear)
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            n_walls: self.scene_walls,
            n_point_targets: self.scene_targets,
            wall_length_range_m: (self.scene_wall_min_m, self.scene_wall_max_m),
            clutter_density: self.scene_clutter,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch: self.train_batch,
            lr: self.train_lr,
            seed,
            arch: self.train_arch,
        }
    }

    pub fn posterior_config(&self, seed: u64) -> PosteriorConfig {
        PosteriorConfig {
            zeta: self.zeta,
            gamma: self.gamma,
            k_meas: self.k_meas,
            lambda_diff: self.lambda_diff,
            t_steps: self.t_steps,
            mode: self.mode,
            grad_mode: self.grad_mode,
            early_stop_frac: self.early_stop_frac,
            eps_mag: self.eps_mag,
            seed,
        }
    }

    pub fn reg_config(&self, norm: RegNorm, seed: u64) -> RegConfig {
        RegConfig {
            norm,
            reg_weight: self.reg_weight,
            step_size: self.reg_step,
            iters: self.reg_iters,
            seed,
            random_init: false,
        }
    }

    pub fn cfar_config(&self) -> CfarConfig {
        CfarConfig {
            guard_cells: self.cfar_guard,
            train_cells: self.cfar_train,
            threshold_factor: self.cfar_factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_fully_defaulted() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.n_az, 64);
        assert_eq!(cfg.k_meas, 20);
        assert!(cfg.build_grid().is_ok());
        assert!(cfg.build_array().is_ok());
    }

    #[test]
    fn violations_are_aggregated() {
        let doc = r#"{
            "grid": {"n_az": 32, "bogus": 1},
            "posterior": {"mode": "warp"},
            "mystery": {}
        }"#;
        let err = RunConfig::from_json(doc).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("warp"), "{err}");
        assert!(err.contains("mystery"), "{err}");
        assert!(err.contains("3 violation"), "{err}");
    }

    #[test]
    fn sections_override_defaults() {
        let doc = r#"{
            "grid": {"n_az": 32, "n_rng": 48},
            "array": {"n_antennas": 8, "spacing_over_lambda": 0.4},
            "noise": {"sigma": 0.05},
            "schedule": {"t": 50, "beta_max": 0.2, "codec": "pool2", "arch": "conv"},
            "posterior": {"zeta": 0.01, "k": 5, "lambda_diff": 0.5, "mode": "ancestral", "grad_mode": "passthrough"},
            "regularized": {"norm": "l2", "iters": 10},
            "cfar": {"guard": [1, 1], "train": [4, 4]},
            "io": {"threshold": 0.05}
        }"#;
        let cfg = RunConfig::from_json(doc).unwrap();
        assert_eq!(cfg.build_grid().unwrap().dims(), (32, 48));
        assert_eq!(cfg.build_array().unwrap().n_antennas, 8);
        assert_eq!(cfg.noise_sigma, 0.05);
        assert_eq!(cfg.build_schedule().unwrap().len(), 50);
        assert_eq!(cfg.codec, Codec::Pool2);
        assert_eq!(cfg.train_arch, DenoiserArch::Conv);
        assert_eq!(cfg.lambda_diff, Some(0.5));
        assert_eq!(cfg.mode, SamplerMode::Ancestral);
        assert_eq!(cfg.grad_mode, GradMode::Passthrough);
        assert_eq!(cfg.reg_norm, RegNorm::L2);
        assert_eq!(cfg.cfar_guard, (1, 1));
        assert_eq!(cfg.threshold, 0.05);
    }

    #[test]
    fn invalid_json_is_a_config_error() {
        assert!(RunConfig::from_json("{not json").is_err());
    }
}
