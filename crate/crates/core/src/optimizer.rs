//! AdamW with cosine learning-rate decay.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ParamBlock;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multiplier for the sharpness parameter ρ.
    pub rho_lr_scale: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr0: 1e-4, weight_decay: 0.01, epochs: 12, steps_per_epoch: 100, beta1: 0.9, beta2: 0.999, eps: 1e-8, rho_lr_scale: 1.0 }
    }
}

impl OptimConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("optim.lr0 = {} must be positive", self.lr0)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("optim.weight_decay = {} must be non-negative", self.weight_decay)));
        }
        if !(self.rho_lr_scale >= 0.0 && self.rho_lr_scale.is_finite()) {
            return Err(Error::Config(format!("optim.rho_lr_scale = {} must be non-negative", self.rho_lr_scale)));
        }
        if self.total_steps() == 0 {
            return Err(Error::Config("optim.epochs and optim.steps_per_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("optim betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer state: step count and per-parameter moments (kept in f64).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// lr0 · ½(1 + cos(π·step/total)).
pub fn cosine_lr(lr0: f64, step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::domain("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::domain(format!("step {step} beyond schedule horizon {total_steps}")));
    }
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()))
}

impl OptimState {
    pub fn new(config: OptimConfig, num_params: usize) -> Self {
        OptimState { config, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    /// Learning rate for the next step.
    pub fn lr(&self) -> Result<f64> {
        cosine_lr(self.config.lr0, self.step, self.config.total_steps())
    }

    /// One decoupled-decay update; returns the learning rate used.
    ///
    /// Blocks flagged `unit_interval` are clamped to [0, 1] afterwards.
    pub fn step<F: Real>(&mut self, params: &mut [F], grads: &[F], blocks: &[ParamBlock]) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Structural(format!(
                "optimizer holds {} moments for {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for b in blocks {
            if let Some(i) = grads[b.range.clone()].iter().position(|g| !g.is_finite()) {
                return Err(Error::numeric(format!("gradient of block {}", b.name), format!("entry {i} is {}", grads[b.range.start + i])));
            }
        }
        let lr = self.lr()?;
        let c = &self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for b in blocks {
            let wd = if b.weight_decay { c.weight_decay } else { 0.0 };
            let lr = if b.name == "rho" { lr * c.rho_lr_scale } else { lr };
            for i in b.range.clone() {
                let g = grads[i].f64();
                let m = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
                let v = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let p = params[i].f64();
                let mut np = p - lr * ((m / bc1) / ((v / bc2).sqrt() + c.eps) + wd * p);
                if b.unit_interval {
                    np = np.clamp(0.0, 1.0);
                }
                params[i] = F::of(np);
            }
        }
        Ok(lr)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * self.m.len());
        out.extend_from_slice(b"SOCO");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for v in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(config: OptimConfig, buf: &[u8], name: &str) -> Result<Self> {
        let err = |off: usize, msg: &str| Error::parse(name, off, msg);
        if buf.len() < 24 || &buf[..4] != b"SOCO" {
            return Err(err(0, "not an optimizer state file"));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != 1 {
            return Err(err(4, "unsupported optimizer state version"));
        }
        let step = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
        let n = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes")) as usize;
        if n.checked_mul(16).and_then(|b| b.checked_add(24)) != Some(buf.len()) {
            return Err(err(16, "moment count does not match file size"));
        }
        let vals: Vec<f64> = buf[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(OptimState { config, step, m: vals[..n].to_vec(), v: vals[n..].to_vec() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path).and_then(|mut f| f.write_all(&self.to_bytes())).map_err(|e| Error::io(path, e))
    }

    pub fn load(config: OptimConfig, path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(config, &buf, &path.display().to_string())
    }
}
