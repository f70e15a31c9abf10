//! Cyclical learning rates stepped once per training iteration.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    Constant,
    Triangular,
    Triangular2,
    ExpRange,
}

impl SchedulePolicy {
    pub const ALL: [SchedulePolicy; 4] = [
        SchedulePolicy::Constant,
        SchedulePolicy::Triangular,
        SchedulePolicy::Triangular2,
        SchedulePolicy::ExpRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulePolicy::Constant => "constant",
            SchedulePolicy::Triangular => "triangular",
            SchedulePolicy::Triangular2 => "triangular2",
            SchedulePolicy::ExpRange => "exp_range",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub policy: SchedulePolicy,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Iterations per half-cycle. 0 means "twice the iterations per epoch",
    /// filled in by [`SchedulerConfig::resolve`].
    pub step_size: usize,
    /// Per-iteration decay of the amplitude, `exp_range` only.
    pub gamma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self::cyclic(SchedulePolicy::ExpRange)
    }
}

impl SchedulerConfig {
    pub fn cyclic(policy: SchedulePolicy) -> Self {
        Self {
            policy,
            base_lr: 0.001,
            max_lr: 0.006,
            step_size: 0,
            gamma: 0.9998,
        }
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            policy: SchedulePolicy::Constant,
            base_lr: lr,
            max_lr: lr,
            ..Self::cyclic(SchedulePolicy::Constant)
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "need 0 < base_lr <= max_lr, got {} and {}",
                self.base_lr, self.max_lr
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(OptimError::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Copy with an automatic step size replaced by `2 * iters_per_epoch`.
    pub fn resolve(&self, iters_per_epoch: usize) -> SchedulerConfig {
        let mut out = self.clone();
        if out.step_size == 0 {
            out.step_size = (2 * iters_per_epoch).max(1);
        }
        out
    }
}

/// Learning rate at iteration `t`. An unresolved step size counts as 1.
pub fn lr_at(cfg: &SchedulerConfig, t: u64) -> f64 {
    if cfg.policy == SchedulePolicy::Constant {
        return cfg.base_lr;
    }
    let step = cfg.step_size.max(1) as f64;
    let t = t as f64;
    let cycle = (1.0 + t / (2.0 * step)).floor();
    let x = (t / step - 2.0 * cycle + 1.0).abs();
    let scale = match cfg.policy {
        SchedulePolicy::Triangular => 1.0,
        SchedulePolicy::Triangular2 => 1.0 / 2f64.powf(cycle - 1.0),
        SchedulePolicy::ExpRange => cfg.gamma.powf(t),
        SchedulePolicy::Constant => unreachable!(),
    };
    cfg.base_lr + (cfg.max_lr - cfg.base_lr) * (1.0 - x).max(0.0) * scale
}

/// `(iteration, lr)` for `0..iterations`.
pub fn lr_trace(cfg: &SchedulerConfig, iterations: u64) -> Vec<(u64, f64)> {
    (0..iterations).map(|t| (t, lr_at(cfg, t))).collect()
}

/// CSV with header `iteration,lr`; values use the shortest round-trip form.
pub fn write_lr_trace(path: &Path, trace: &[(u64, f64)]) -> Result<(), OptimError> {
    let io = |source| OptimError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["iteration", "lr"]).map_err(|e| io(e.into()))?;
    for (t, lr) in trace {
        w.write_record([t.to_string(), lr.to_string()]).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn read_lr_trace(path: &Path) -> Result<Vec<(u64, f64)>, OptimError> {
    let bad = |message: String| OptimError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let t = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("bad iteration in {rec:?}")))?;
        let lr = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("bad lr in {rec:?}")))?;
        out.push((t, lr));
    }
    Ok(out)
}

/// Streams a trace to any writer; used by the training loop.
pub fn append_lr_rows<W: Write>(w: &mut W, rows: &[(u64, f64)]) -> std::io::Result<()> {
    for (t, lr) in rows {
        writeln!(w, "{t},{lr}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(policy: SchedulePolicy, step: usize) -> SchedulerConfig {
        SchedulerConfig {
            step_size: step,
            ..SchedulerConfig::cyclic(policy)
        }
    }

    #[test]
    fn spot_values() {
        let tri = cfg(SchedulePolicy::Triangular, 200);
        assert_eq!(lr_at(&tri, 0), 0.001);
        assert_eq!(lr_at(&tri, 200), 0.006);
        let tri2 = cfg(SchedulePolicy::Triangular2, 200);
        assert_eq!(lr_at(&tri2, 600), 0.0035);
    }

    #[test]
    fn triangular_is_periodic() {
        let c = cfg(SchedulePolicy::Triangular, 37);
        for t in 0..2000 {
            assert!((lr_at(&c, t) - lr_at(&c, t + 74)).abs() < 1e-15);
        }
    }

    #[test]
    fn triangular2_peaks_halve() {
        let c = cfg(SchedulePolicy::Triangular2, 50);
        for k in 1..10u32 {
            let peak = lr_at(&c, (2 * k as u64 - 1) * 50);
            let expect = 0.001 + 0.005 / 2f64.powi(k as i32 - 1);
            assert!((peak - expect).abs() < 1e-18, "cycle {k}: {peak} vs {expect}");
        }
    }

    #[test]
    fn exp_range_under_decayed_envelope() {
        let c = cfg(SchedulePolicy::ExpRange, 40);
        let tri = cfg(SchedulePolicy::Triangular, 40);
        for t in 0..5000 {
            let lr = lr_at(&c, t);
            let bound = 0.001 + (lr_at(&tri, t) - 0.001) * 0.9998f64.powf(t as f64);
            assert!(lr >= 0.001 && lr <= bound + 1e-18);
        }
    }

    #[test]
    fn constant_ignores_iteration() {
        let c = SchedulerConfig::constant(0.001);
        assert!((0..1000).all(|t| lr_at(&c, t * 997) == 0.001));
    }

    #[test]
    fn resolve_and_validate() {
        let c = SchedulerConfig::default().resolve(6);
        assert_eq!(c.step_size, 12);
        assert_eq!(cfg(SchedulePolicy::Triangular, 5).resolve(6).step_size, 5);
        assert!(SchedulerConfig { base_lr: 0.01, ..Default::default() }.validate().is_err());
        assert!(SchedulerConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(SchedulerConfig::default().validate().is_ok());
    }

    #[test]
    fn trace_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lr.csv");
        let trace = lr_trace(&cfg(SchedulePolicy::ExpRange, 13), 300);
        write_lr_trace(&p, &trace).unwrap();
        assert_eq!(read_lr_trace(&p).unwrap(), trace);
    }

    #[test]
    fn policy_names() {
        for p in SchedulePolicy::ALL {
            assert_eq!(SchedulePolicy::parse(p.name()), Some(p));
        }
    }
}
