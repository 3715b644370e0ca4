//! Run configuration: a flat `key = value` file with dotted keys.
//!
//! Lines starting with `#` are comments. Every key is optional; missing keys
//! take the value of the selected preset. `config.resolved` lists every key,
//! so feeding it back reproduces a run exactly.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use ksc_core::hjb::StageCost;
use ksc_core::{ControlBox, GridGeometry, HjbParams, InstantaneousParams, InteractionKernel, Penalty};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Hk,
    Ar,
    Custom,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hk" => Ok(Self::Hk),
            "ar" => Ok(Self::Ar),
            "custom" => Ok(Self::Custom),
            _ => Err(format!("unknown preset `{s}` (expected hk, ar or custom)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hk => "hk",
            Self::Ar => "ar",
            Self::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlVariant {
    None,
    IcL1,
    IcL2,
    IhL1,
    IhL2,
}

impl ControlVariant {
    pub const ALL: [Self; 5] = [Self::None, Self::IcL1, Self::IcL2, Self::IhL1, Self::IhL2];

    pub fn penalty(self) -> Option<Penalty> {
        match self {
            Self::None => None,
            Self::IcL1 | Self::IhL1 => Some(Penalty::L1),
            Self::IcL2 | Self::IhL2 => Some(Penalty::L2),
        }
    }

    pub fn is_infinite_horizon(self) -> bool {
        matches!(self, Self::IhL1 | Self::IhL2)
    }
}

impl FromStr for ControlVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| format!("unknown control `{s}` (expected none, ic-l1, ic-l2, ih-l1 or ih-l2)"))
    }
}

impl fmt::Display for ControlVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::IcL1 => "ic-l1",
            Self::IcL2 => "ic-l2",
            Self::IhL1 => "ih-l1",
            Self::IhL2 => "ih-l2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbConfig {
    pub n_nodes: usize,
    pub n_controls: usize,
    pub dt: f64,
    pub tol: f64,
    pub max_policy_iters: usize,
    /// Directory holding cached tables; empty means the run directory.
    pub cache_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub n_frames: u64,
    pub emit_svg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub kernel: InteractionKernel,
    pub control: ControlVariant,
    pub gamma_bar: f64,
    pub lambda: f64,
    pub target: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub epsilon: f64,
    pub t_final: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub dx: f64,
    pub hjb: HjbConfig,
    pub output: OutputConfig,
}

/// Desk-scale sample count and interaction scale.
pub const DESK_SAMPLES: usize = 20_000;
pub const DESK_EPSILON: f64 = 1e-3;
/// Reference-scale sample count and interaction scale.
pub const PAPER_SAMPLES: usize = 500_000;
pub const PAPER_EPSILON: f64 = 5e-5;

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (kernel, t_final, gamma_bar, lambda) = match preset {
            Preset::Hk | Preset::Custom => (InteractionKernel::hegselmann_krause(), 40.0, 0.3, 0.05),
            Preset::Ar => (InteractionKernel::attraction_repulsion(), 10.0, 0.25, 0.1),
        };
        Self {
            preset,
            kernel,
            control: ControlVariant::None,
            gamma_bar,
            lambda,
            target: 0.0,
            u_min: -1.0,
            u_max: 1.0,
            epsilon: DESK_EPSILON,
            t_final,
            n_samples: DESK_SAMPLES,
            seed: 1,
            omega_min: -1.0,
            omega_max: 1.0,
            dx: 0.025,
            hjb: HjbConfig {
                n_nodes: 101,
                n_controls: 21,
                dt: 0.1,
                tol: 1e-6,
                max_policy_iters: 200,
                cache_dir: String::new(),
            },
            output: OutputConfig {
                n_frames: 100,
                emit_svg: true,
            },
        }
    }

    pub fn paper_scale(&mut self) {
        self.n_samples = PAPER_SAMPLES;
        self.epsilon = PAPER_EPSILON;
    }

    pub fn control_box(&self) -> ControlBox {
        ControlBox {
            u_min: self.u_min,
            u_max: self.u_max,
        }
    }

    pub fn hjb_params(&self, penalty: Penalty) -> HjbParams {
        HjbParams {
            dt: self.hjb.dt,
            lambda: self.lambda,
            gamma_bar: self.gamma_bar,
            penalty,
            target: self.target,
            n_controls: self.hjb.n_controls,
            tol: self.hjb.tol,
            max_policy_iters: self.hjb.max_policy_iters,
            cost: StageCost::Tracking,
            ..HjbParams::default()
        }
    }

    pub fn hjb_geometry(&self) -> Result<GridGeometry, CliError> {
        GridGeometry::new(self.omega_min, self.omega_max, self.hjb.n_nodes)
            .map_err(|e| CliError::invalid("hjb.n_nodes", e.to_string()))
    }

    /// Instantaneous-law parameters; the controller step is set per
    /// interaction by the engines.
    pub fn instantaneous_params(&self, penalty: Penalty) -> InstantaneousParams {
        InstantaneousParams::from_rate(self.gamma_bar, self.lambda, 2.0 * self.epsilon, self.target, penalty)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::invalid(field, format!("must be positive and finite, got {v}")))
            }
        };
        self.kernel
            .validate()
            .map_err(|e| CliError::invalid(kernel_key(e.field), e.reason))?;
        match (self.preset, self.kernel) {
            (Preset::Hk, k) if k != InteractionKernel::hegselmann_krause() => {
                return Err(CliError::invalid("kernel", "preset hk fixes the bounded-confidence kernel; use preset = custom"));
            }
            (Preset::Ar, k) if k != InteractionKernel::attraction_repulsion() => {
                return Err(CliError::invalid("kernel", "preset ar fixes the attraction-repulsion kernel; use preset = custom"));
            }
            _ => {}
        }
        if !(self.gamma_bar >= 0.0 && self.gamma_bar.is_finite()) {
            return Err(CliError::invalid("gamma_bar", "must be non-negative and finite"));
        }
        positive("lambda", self.lambda)?;
        positive("epsilon", self.epsilon)?;
        positive("t_final", self.t_final)?;
        positive("dx", self.dx)?;
        if self.t_final < self.epsilon {
            return Err(CliError::invalid("t_final", "must cover at least one step of length epsilon"));
        }
        if self.n_samples < 2 {
            return Err(CliError::invalid("n_samples", "need at least 2 samples"));
        }
        if !(self.omega_min.is_finite() && self.omega_max.is_finite() && self.omega_min < self.omega_max) {
            return Err(CliError::invalid("omega.min", "need finite bounds with omega.min < omega.max"));
        }
        if !(self.omega_min..=self.omega_max).contains(&self.target) {
            return Err(CliError::invalid("target", "must lie inside omega"));
        }
        self.control_box()
            .validate()
            .map_err(|e| CliError::invalid("box.u_min", e.to_string()))?;
        positive("hjb.dt", self.hjb.dt)?;
        positive("hjb.tol", self.hjb.tol)?;
        if self.hjb.n_nodes < 2 {
            return Err(CliError::invalid("hjb.n_nodes", "need at least 2 nodes"));
        }
        if self.hjb.n_controls == 0 || self.hjb.n_controls % 2 == 0 {
            return Err(CliError::invalid("hjb.n_controls", "must be odd so that 0 is a control"));
        }
        if self.hjb.max_policy_iters == 0 {
            return Err(CliError::invalid("hjb.max_policy_iters", "must be positive"));
        }
        if self.output.n_frames == 0 {
            return Err(CliError::invalid("output.n_frames", "must be positive"));
        }
        Ok(())
    }

    /// Every parameter as `key = value`, one per line, in a fixed order.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", &self.preset);
        match self.kernel {
            InteractionKernel::BoundedConfidence { delta, smoothing } => {
                kv("kernel.type", &"bounded_confidence");
                kv("kernel.delta", &delta);
                kv("kernel.smoothing", &smoothing);
            }
            InteractionKernel::AttractionRepulsion { a, b, sigma } => {
                kv("kernel.type", &"attraction_repulsion");
                kv("kernel.a", &a);
                kv("kernel.b", &b);
                kv("kernel.sigma", &sigma);
            }
            InteractionKernel::Constant => kv("kernel.type", &"constant"),
            InteractionKernel::Zero => kv("kernel.type", &"zero"),
        }
        kv("control", &self.control);
        kv("gamma_bar", &self.gamma_bar);
        kv("lambda", &self.lambda);
        kv("target", &self.target);
        kv("box.u_min", &self.u_min);
        kv("box.u_max", &self.u_max);
        kv("epsilon", &self.epsilon);
        kv("t_final", &self.t_final);
        kv("n_samples", &self.n_samples);
        kv("seed", &self.seed);
        kv("omega.min", &self.omega_min);
        kv("omega.max", &self.omega_max);
        kv("dx", &self.dx);
        kv("hjb.n_nodes", &self.hjb.n_nodes);
        kv("hjb.n_controls", &self.hjb.n_controls);
        kv("hjb.dt", &self.hjb.dt);
        kv("hjb.tol", &self.hjb.tol);
        kv("hjb.max_policy_iters", &self.hjb.max_policy_iters);
        kv("hjb.cache_dir", &self.hjb.cache_dir);
        kv("output.n_frames", &self.output.n_frames);
        kv("output.emit_svg", &self.output.emit_svg);
        s
    }

    /// Parses a configuration text. `preset_override` wins over the file's
    /// own `preset` key.
    pub fn parse(text: &str, preset_override: Option<Preset>) -> Result<Self, CliError> {
        let entries = parse_entries(text)?;
        let preset = match preset_override {
            Some(p) => p,
            None => match entries.get("preset") {
                Some(v) => v.parse().map_err(|e| CliError::invalid("preset", e))?,
                None => Preset::Hk,
            },
        };
        let mut cfg = Self::preset(preset);
        let mut kernel = KernelFields::from(cfg.kernel);
        for (key, value) in &entries {
            cfg.apply(key, value, &mut kernel)?;
        }
        cfg.kernel = kernel.build()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, kernel: &mut KernelFields) -> Result<(), CliError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| CliError::invalid_owned(key, format!("cannot parse `{v}`: {e}")))
        }
        match key {
            "preset" => {}
            "kernel.type" => kernel.kind = Some(value.to_string()),
            "kernel.delta" => kernel.delta = Some(num(key, value)?),
            "kernel.smoothing" => kernel.smoothing = Some(num(key, value)?),
            "kernel.a" => kernel.a = Some(num(key, value)?),
            "kernel.b" => kernel.b = Some(num(key, value)?),
            "kernel.sigma" => kernel.sigma = Some(num(key, value)?),
            "control" => self.control = value.parse().map_err(|e| CliError::invalid("control", e))?,
            "gamma_bar" => self.gamma_bar = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "target" => self.target = num(key, value)?,
            "box.u_min" => self.u_min = num(key, value)?,
            "box.u_max" => self.u_max = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "t_final" => self.t_final = num(key, value)?,
            "n_samples" => self.n_samples = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "omega.min" => self.omega_min = num(key, value)?,
            "omega.max" => self.omega_max = num(key, value)?,
            "dx" => self.dx = num(key, value)?,
            "hjb.n_nodes" => self.hjb.n_nodes = num(key, value)?,
            "hjb.n_controls" => self.hjb.n_controls = num(key, value)?,
            "hjb.dt" => self.hjb.dt = num(key, value)?,
            "hjb.tol" => self.hjb.tol = num(key, value)?,
            "hjb.max_policy_iters" => self.hjb.max_policy_iters = num(key, value)?,
            "hjb.cache_dir" => self.hjb.cache_dir = value.to_string(),
            "output.n_frames" => self.output.n_frames = num(key, value)?,
            "output.emit_svg" => self.output.emit_svg = num(key, value)?,
            _ => return Err(CliError::invalid_owned(key, "unknown key".into())),
        }
        Ok(())
    }
}

fn kernel_key(field: &str) -> &'static str {
    match field {
        "delta" => "kernel.delta",
        "smoothing" => "kernel.smoothing",
        "a" => "kernel.a",
        "b" => "kernel.b",
        "sigma" => "kernel.sigma",
        _ => "kernel",
    }
}

/// Kernel keys collected before the kernel is assembled, so that their
/// order in the file does not matter.
#[derive(Default)]
struct KernelFields {
    kind: Option<String>,
    delta: Option<f64>,
    smoothing: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    sigma: Option<f64>,
    base: Option<InteractionKernel>,
}

impl From<InteractionKernel> for KernelFields {
    fn from(k: InteractionKernel) -> Self {
        Self {
            base: Some(k),
            ..Self::default()
        }
    }
}

impl KernelFields {
    fn build(self) -> Result<InteractionKernel, CliError> {
        let base = self.base.unwrap_or(InteractionKernel::Zero);
        let kind = match self.kind.as_deref() {
            Some(k) => k,
            None => match base {
                InteractionKernel::BoundedConfidence { .. } => "bounded_confidence",
                InteractionKernel::AttractionRepulsion { .. } => "attraction_repulsion",
                InteractionKernel::Constant => "constant",
                InteractionKernel::Zero => "zero",
            },
        };
        let reject = |name: &'static str, set: bool| {
            if set {
                Err(CliError::invalid(name, format!("not a parameter of kernel `{kind}`")))
            } else {
                Ok(())
            }
        };
        let bc = self.delta.is_some() || self.smoothing.is_some();
        let ar = self.a.is_some() || self.b.is_some() || self.sigma.is_some();
        match kind {
            "bounded_confidence" => {
                reject("kernel.a", ar)?;
                let (d0, s0) = match base {
                    InteractionKernel::BoundedConfidence { delta, smoothing } => (delta, smoothing),
                    _ => (ksc_core::kernels::HK_DELTA, ksc_core::kernels::HK_SMOOTHING),
                };
                Ok(InteractionKernel::BoundedConfidence {
                    delta: self.delta.unwrap_or(d0),
                    smoothing: self.smoothing.unwrap_or(s0),
                })
            }
            "attraction_repulsion" => {
                reject("kernel.delta", bc)?;
                let (a0, b0, s0) = match base {
                    InteractionKernel::AttractionRepulsion { a, b, sigma } => (a, b, sigma),
                    _ => (1.0, -1.0, 1e-4),
                };
                Ok(InteractionKernel::AttractionRepulsion {
                    a: self.a.unwrap_or(a0),
                    b: self.b.unwrap_or(b0),
                    sigma: self.sigma.unwrap_or(s0),
                })
            }
            "constant" | "zero" => {
                reject("kernel.delta", bc)?;
                reject("kernel.a", ar)?;
                Ok(if kind == "constant" {
                    InteractionKernel::Constant
                } else {
                    InteractionKernel::Zero
                })
            }
            other => Err(CliError::invalid_owned("kernel.type", format!("unknown kernel `{other}`"))),
        }
    }
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::invalid_owned(
                &format!("line {}", n + 1),
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::invalid_owned(&format!("line {}", n + 1), "empty key".into()));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::invalid_owned(k, "key given twice".into()));
        }
    }
    Ok(out)
}
