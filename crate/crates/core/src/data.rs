//! Observed `(x, μ, x')` transitions and their CSV representation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, State, SystemSpec, Transition};
use crate::error::{Error, Result};

/// Smallest per-component scale used when normalizing state discrepancies.
pub const MIN_COMPONENT_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Self { transitions }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = Transition>) {
        self.transitions.extend(more);
    }

    /// Keeps only the most recent `window` transitions.
    pub fn latest(&self, window: usize) -> TransitionDataset {
        let start = self.transitions.len().saturating_sub(window);
        TransitionDataset::new(self.transitions[start..].to_vec())
    }

    /// Max absolute value of each state component over all observed states,
    /// floored at [`MIN_COMPONENT_SCALE`].
    pub fn component_scale(&self, state_dim: usize) -> Vec<f64> {
        let mut scale = vec![MIN_COMPONENT_SCALE; state_dim];
        for t in &self.transitions {
            for s in [&t.x, &t.x_next] {
                for (c, v) in scale.iter_mut().zip(s.iter()) {
                    *c = c.max(v.abs());
                }
            }
        }
        scale
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for t in &self.transitions {
            for (what, len, expected) in [
                ("state", t.x.len(), spec.state_dim()),
                ("next state", t.x_next.len(), spec.state_dim()),
                ("action", t.mu.len(), spec.action_dim()),
            ] {
                if len != expected {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected,
                        found: len,
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes the dataset as CSV with columns `x_*`, `u_*`, `next_*`.
    pub fn write_csv<W: Write>(&self, spec: &SystemSpec, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(header(spec))?;
        for t in &self.transitions {
            let row: Vec<String> = t
                .x
                .iter()
                .chain(t.mu.iter())
                .chain(t.x_next.iter())
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(spec: &SystemSpec, reader: R) -> Result<Self> {
        let (n, m) = (spec.state_dim(), spec.action_dim());
        let mut r = csv::Reader::from_reader(reader);
        let expected = header(spec);
        let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if found != expected {
            return Err(Error::DimensionMismatch {
                what: "dataset columns",
                expected: expected.len(),
                found: found.len(),
            });
        }
        let mut transitions = Vec::new();
        for record in r.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::NonFinite("dataset"))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset"));
            }
            transitions.push(Transition {
                x: State(values[..n].to_vec()),
                mu: Action(values[n..n + m].to_vec()),
                x_next: State(values[n + m..].to_vec()),
            });
        }
        Ok(Self { transitions })
    }
}

fn header(spec: &SystemSpec) -> Vec<String> {
    let (n, m) = (spec.state_dim(), spec.action_dim());
    (0..n)
        .map(|i| format!("x_{i}"))
        .chain((0..m).map(|i| format!("u_{i}")))
        .chain((0..n).map(|i| format!("next_{i}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TransitionDataset {
        TransitionDataset::new(vec![
            Transition {
                x: State(vec![0.0, -2.0, 3.0, 1e-9]),
                mu: Action(vec![1.5]),
                x_next: State(vec![0.1, 0.5, 3.1, 0.0]),
            },
            Transition {
                x: State(vec![0.1, 0.5, 3.1, 0.0]),
                mu: Action(vec![-0.25]),
                x_next: State(vec![0.2, 0.75, 3.05, -0.4]),
            },
        ])
    }

    #[test]
    fn component_scale_is_max_abs_with_floor() {
        let scale = sample().component_scale(4);
        assert_eq!(scale, vec![0.2, 2.0, 3.1, 0.4]);
        let empty = TransitionDataset::default().component_scale(2);
        assert_eq!(empty, vec![MIN_COMPONENT_SCALE; 2]);
    }

    #[test]
    fn csv_round_trip() {
        let spec = SystemSpec::cart_pole();
        let data = sample();
        let mut buf = Vec::new();
        data.write_csv(&spec, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,x_2,x_3,u_0,next_0,next_1,next_2,next_3\n"));
        let back = TransitionDataset::read_csv(&spec, buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn wrong_columns_rejected() {
        let spec = SystemSpec::planar_push();
        let mut buf = Vec::new();
        sample().write_csv(&SystemSpec::cart_pole(), &mut buf).unwrap();
        assert!(TransitionDataset::read_csv(&spec, buf.as_slice()).is_err());
    }

    #[test]
    fn latest_window() {
        let data = sample();
        assert_eq!(data.latest(1).transitions, data.transitions[1..].to_vec());
        assert_eq!(data.latest(10), data);
    }
}
