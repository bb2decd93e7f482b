use crate::error::{EdaError, Result};
use crate::model::Point;
use crate::objectives::{Domain, Objective};

/// Largest state count the oracle will enumerate.
pub const MAX_STATES: u64 = 1 << 20;

/// Every state of a small discrete domain, in lexicographic order (first
/// coordinate most significant), with the objective tabulated once.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumerableSpace {
    domain: Domain,
    states: Vec<Point>,
    values: Vec<f64>,
    objective: Objective,
}

impl EnumerableSpace {
    /// Tabulates `objective`. Negative values are rejected: every exact
    /// quantity here assumes `f >= 0`.
    pub fn new(objective: Objective) -> Result<Self> {
        let domain = objective.domain();
        let count = domain
            .num_states()
            .ok_or_else(|| EdaError::Input(format!("{domain:?} is not enumerable")))?;
        if count > MAX_STATES as u128 {
            return Err(EdaError::TooManyStates {
                states: count,
                cap: MAX_STATES,
            });
        }
        let states: Vec<Point> = (0..count as usize).map(|i| state_at(domain, i)).collect();
        let mut values = Vec::with_capacity(states.len());
        for (index, z) in states.iter().enumerate() {
            let value = objective.evaluate(z)?;
            if !value.is_finite() {
                return Err(EdaError::Objective { index, value });
            }
            if value < 0.0 {
                return Err(EdaError::Input(format!(
                    "f({z:?}) = {value}; exact computations assume a nonnegative objective (f >= 0)"
                )));
            }
            values.push(value);
        }
        Ok(Self {
            domain,
            states,
            values,
            objective,
        })
    }

    /// A space whose objective is an explicit table in lexicographic order.
    pub fn from_table(domain: Domain, values: Vec<f64>) -> Result<Self> {
        Self::new(Objective::table(domain, values)?)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn states(&self) -> &[Point] {
        &self.states
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Same states, objective replaced by `1 + s (f - 1)`.
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        let values = self.values.iter().map(|f| 1.0 + s * (f - 1.0)).collect();
        Self::from_table(self.domain, values)
    }
}

/// Inverse of [`Domain::state_index`].
pub fn state_at(domain: Domain, mut index: usize) -> Point {
    match domain {
        Domain::Binary { dim } => {
            let mut bits = vec![0u8; dim];
            for b in bits.iter_mut().rev() {
                *b = (index % 2) as u8;
                index /= 2;
            }
            Point::Bits(bits)
        }
        Domain::Categorical { dim, arity } => {
            let mut labels = vec![0usize; dim];
            for l in labels.iter_mut().rev() {
                *l = index % arity;
                index /= arity;
            }
            Point::Labels(labels)
        }
        Domain::Real { .. } => unreachable!("real domains are rejected before enumeration"),
    }
}
