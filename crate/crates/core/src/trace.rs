//! Per-interval protocol trace.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hilbert::{system_state, DensityMatrix, Ket, OperatorMatrix};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Interact,
    Store,
    Teleport,
    Recall,
    Reverse,
    FreeEvolve,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Interact => "interact",
            Phase::Store => "store",
            Phase::Teleport => "teleport",
            Phase::Recall => "recall",
            Phase::Reverse => "reverse",
            Phase::FreeEvolve => "free-evolve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub phase: Phase,
    /// End of the interval, `step · Δt`.
    pub model_time: f64,
    pub system_energy: f64,
    pub system_purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    dt: f64,
    #[serde(skip)]
    system_dim: usize,
    records: Vec<TraceRecord>,
}

impl ProtocolTrace {
    pub fn new(dt: f64, system_dim: usize) -> Self {
        ProtocolTrace {
            dt,
            system_dim,
            records: Vec::new(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Appends a record for the interval that just ended, from the reduced
    /// system state of `register`.
    pub fn record(&mut self, phase: Phase, register: &Ket, h_sys: &OperatorMatrix) -> Result<()> {
        let rho = system_state(register, self.system_dim)?;
        self.record_state(phase, &rho, h_sys);
        Ok(())
    }

    pub fn record_state(&mut self, phase: Phase, rho: &DensityMatrix, h_sys: &OperatorMatrix) {
        let step = self.records.len() + 1;
        self.records.push(TraceRecord {
            step,
            phase,
            model_time: step as f64 * self.dt,
            system_energy: rho.expectation(h_sys).re,
            system_purity: rho.purity(),
        });
    }

    /// Appends `other`, continuing the step count and clock.
    pub fn append(&mut self, other: &ProtocolTrace) {
        for r in &other.records {
            let step = self.records.len() + 1;
            self.records.push(TraceRecord {
                step,
                model_time: step as f64 * self.dt,
                ..r.clone()
            });
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "step",
            "phase",
            "model_time",
            "system_energy",
            "system_purity",
            "schema_version",
        ])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.phase.as_str().to_string(),
                format!("{:.12e}", r.model_time),
                format!("{:.12e}", r.system_energy),
                format!("{:.12e}", r.system_purity),
                SCHEMA_VERSION.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_increase_by_dt() {
        let mut t = ProtocolTrace::new(0.1, 2);
        let h = OperatorMatrix::diagonal(&[0.0, 1.0]);
        let k = Ket::basis(4, 3);
        for phase in [Phase::Interact, Phase::Store, Phase::Teleport] {
            t.record(phase, &k, &h).unwrap();
        }
        let times: Vec<f64> = t.records().iter().map(|r| r.model_time).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!((times[2] - 0.3).abs() < 1e-15);
        assert_eq!(t.records()[0].system_energy, 1.0);
        assert_eq!(t.records()[0].system_purity, 1.0);
        let mut joined = t.clone();
        joined.append(&t);
        assert_eq!(joined.records()[5].step, 6);
    }

    #[test]
    fn csv_has_schema_column() {
        let mut t = ProtocolTrace::new(0.1, 1);
        t.record(Phase::Recall, &Ket::basis(1, 0), &OperatorMatrix::zeros(1))
            .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,phase,model_time,system_energy,system_purity,schema_version"));
        assert!(text.contains(",recall,"));
    }
}
