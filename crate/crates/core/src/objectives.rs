//! Benchmark black-box objectives (maximization form).
//!
//! Continuous objectives are negated so that larger is better; they are
//! `<= 0` everywhere and need a rank, quantile or exponential shaping.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EdaError, Result};
use crate::model::Point;

/// The space an objective is defined on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Binary { dim: usize },
    Categorical { dim: usize, arity: usize },
    Real { dim: usize },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match *self {
            Domain::Binary { dim } | Domain::Categorical { dim, .. } | Domain::Real { dim } => dim,
        }
    }

    /// Number of states of a discrete domain; `None` for `ℝ^d` or on overflow.
    pub fn num_states(&self) -> Option<u128> {
        match *self {
            Domain::Binary { dim } => 2u128.checked_pow(dim as u32),
            Domain::Categorical { dim, arity } => (arity as u128).checked_pow(dim as u32),
            Domain::Real { .. } => None,
        }
    }

    pub fn check(&self, z: &Point) -> Result<()> {
        let ok = match (self, z) {
            (Domain::Binary { dim }, Point::Bits(b)) => b.len() == *dim && b.iter().all(|&v| v <= 1),
            (Domain::Categorical { dim, arity }, Point::Labels(l)) => {
                l.len() == *dim && l.iter().all(|&v| v < *arity)
            }
            (Domain::Real { dim }, Point::Real(v)) => v.len() == *dim,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(EdaError::Domain(format!("point {z:?} is not in {self:?}")))
        }
    }

    /// Lexicographic index of a discrete point (first coordinate most significant).
    pub fn state_index(&self, z: &Point) -> Result<usize> {
        self.check(z)?;
        Ok(match z {
            Point::Bits(b) => b.iter().fold(0usize, |acc, &v| acc * 2 + v as usize),
            Point::Labels(l) => {
                let Domain::Categorical { arity, .. } = *self else { unreachable!() };
                l.iter().fold(0usize, |acc, &v| acc * arity + v)
            }
            Point::Real(_) => {
                return Err(EdaError::Domain("real points have no state index".into()))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    OneMax,
    LeadingOnes,
    Trap { block: usize },
    CatMatch,
    Sphere,
    Rosenbrock,
    Rastrigin,
    Constant(f64),
    Table(Vec<f64>),
}

/// A named, deterministic objective over a declared domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    name: String,
    domain: Domain,
    kind: Kind,
    offset: f64,
}

impl Objective {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn onemax(dim: usize) -> Self {
        Self::build(format!("onemax:{dim}"), Domain::Binary { dim }, Kind::OneMax)
    }

    pub fn leading_ones(dim: usize) -> Self {
        Self::build(format!("leadingones:{dim}"), Domain::Binary { dim }, Kind::LeadingOnes)
    }

    /// `blocks` concatenated deceptive traps of `block` bits each.
    pub fn trap(block: usize, blocks: usize) -> Self {
        Self::build(
            format!("trap:{block}x{blocks}"),
            Domain::Binary { dim: block * blocks },
            Kind::Trap { block },
        )
    }

    /// Number of sites whose label equals `j mod K`.
    pub fn cat_match(dim: usize, arity: usize) -> Self {
        Self::build(
            format!("catmatch:{dim}x{arity}"),
            Domain::Categorical { dim, arity },
            Kind::CatMatch,
        )
    }

    pub fn sphere(dim: usize) -> Self {
        Self::build(format!("sphere:{dim}"), Domain::Real { dim }, Kind::Sphere)
    }

    pub fn rosenbrock(dim: usize) -> Self {
        Self::build(format!("rosenbrock:{dim}"), Domain::Real { dim }, Kind::Rosenbrock)
    }

    pub fn rastrigin(dim: usize) -> Self {
        Self::build(format!("rastrigin:{dim}"), Domain::Real { dim }, Kind::Rastrigin)
    }

    pub fn constant(domain: Domain, value: f64) -> Self {
        let tag = match domain {
            Domain::Binary { dim } => format!("{dim}"),
            Domain::Categorical { dim, arity } => format!("{dim}x{arity}"),
            Domain::Real { dim } => format!("r{dim}"),
        };
        Self::build(format!("const:{tag}={value}"), domain, Kind::Constant(value))
    }

    /// Explicit value table over a discrete domain in lexicographic state order.
    pub fn table(domain: Domain, values: Vec<f64>) -> Result<Self> {
        let states = domain
            .num_states()
            .ok_or_else(|| EdaError::Input("table objectives need a discrete domain".into()))?;
        if states != values.len() as u128 {
            return Err(EdaError::Input(format!(
                "table has {} entries, domain has {states} states",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EdaError::Input("table values must be finite".into()));
        }
        Ok(Self::build("table".into(), domain, Kind::Table(values)))
    }

    /// `f(z) + c`.
    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset += c;
        self.name = format!("{}{:+}", self.name, c);
        self
    }

    fn build(name: String, domain: Domain, kind: Kind) -> Self {
        Self {
            name,
            domain,
            kind,
            offset: 0.0,
        }
    }

    pub fn evaluate(&self, z: &Point) -> Result<f64> {
        self.domain.check(z)?;
        let raw = match (&self.kind, z) {
            (Kind::OneMax, Point::Bits(b)) => b.iter().map(|&v| v as f64).sum(),
            (Kind::LeadingOnes, Point::Bits(b)) => b.iter().take_while(|&&v| v == 1).count() as f64,
            (Kind::Trap { block }, Point::Bits(b)) => b
                .chunks(*block)
                .map(|c| {
                    let u = c.iter().filter(|&&v| v == 1).count();
                    if u == *block {
                        *block as f64
                    } else {
                        (*block - 1 - u) as f64
                    }
                })
                .sum(),
            (Kind::CatMatch, Point::Labels(l)) => {
                let Domain::Categorical { arity, .. } = self.domain else { unreachable!() };
                l.iter().enumerate().filter(|(j, &v)| v == j % arity).count() as f64
            }
            (Kind::Sphere, Point::Real(x)) => -x.iter().map(|v| v * v).sum::<f64>(),
            (Kind::Rosenbrock, Point::Real(x)) => -x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum::<f64>(),
            (Kind::Rastrigin, Point::Real(x)) => {
                -(10.0 * x.len() as f64
                    + x.iter()
                        .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
                        .sum::<f64>())
            }
            (Kind::Constant(c), _) => *c,
            (Kind::Table(values), _) => values[self.domain.state_index(z)?],
            _ => unreachable!("domain check guarantees a matching point kind"),
        };
        Ok(raw + self.offset)
    }

    /// Declared global maximizer and maximum, when known.
    pub fn known_opt(&self) -> Option<(Point, f64)> {
        let d = self.domain.dim();
        let (point, value) = match &self.kind {
            Kind::OneMax | Kind::LeadingOnes => (Point::Bits(vec![1; d]), d as f64),
            Kind::Trap { .. } => (Point::Bits(vec![1; d]), d as f64),
            Kind::CatMatch => {
                let Domain::Categorical { arity, .. } = self.domain else { unreachable!() };
                (Point::Labels((0..d).map(|j| j % arity).collect()), d as f64)
            }
            Kind::Sphere | Kind::Rastrigin => (Point::Real(vec![0.0; d]), 0.0),
            Kind::Rosenbrock => (Point::Real(vec![1.0; d]), 0.0),
            Kind::Constant(c) => {
                let p = match self.domain {
                    Domain::Binary { .. } => Point::Bits(vec![0; d]),
                    Domain::Categorical { .. } => Point::Labels(vec![0; d]),
                    Domain::Real { .. } => Point::Real(vec![0.0; d]),
                };
                (p, *c)
            }
            Kind::Table(_) => return None,
        };
        Some((point, value + self.offset))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn parse_dim(field: &str, s: &str) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(EdaError::config(field, format!("expected a positive integer, got `{s}`"))),
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| EdaError::config("objective", format!("expected `AxB`, got `{s}`")))?;
    Ok((parse_dim("objective", a)?, parse_dim("objective", b)?))
}

impl FromStr for Objective {
    type Err = EdaError;

    /// Parses `onemax:32`, `leadingones:10`, `trap:5x6` (block size x blocks),
    /// `catmatch:8x4` (sites x arity), `sphere:10`, `rosenbrock:5`,
    /// `rastrigin:10`, `const:3=2.5` / `const:r2=1`, with an optional
    /// trailing offset such as `onemax:3+1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (body, offset) = match s.rfind('+') {
            Some(i) if i > 0 => {
                let c = s[i + 1..].parse::<f64>().map_err(|_| {
                    EdaError::config("objective", format!("cannot parse offset in `{s}`"))
                })?;
                if !c.is_finite() {
                    return Err(EdaError::config("objective", "offset must be finite"));
                }
                (&s[..i], c)
            }
            _ => (s, 0.0),
        };
        let (name, arg) = body.split_once(':').ok_or_else(|| {
            EdaError::config("objective", format!("expected `name:params`, got `{s}`"))
        })?;
        let obj = match name {
            "onemax" => Objective::onemax(parse_dim("objective", arg)?),
            "leadingones" => Objective::leading_ones(parse_dim("objective", arg)?),
            "trap" => {
                let (block, blocks) = parse_pair(arg)?;
                if block < 2 {
                    return Err(EdaError::config("objective", "trap blocks need at least 2 bits"));
                }
                Objective::trap(block, blocks)
            }
            "catmatch" => {
                let (dim, arity) = parse_pair(arg)?;
                if arity < 2 {
                    return Err(EdaError::config("objective", "catmatch arity must be >= 2"));
                }
                Objective::cat_match(dim, arity)
            }
            "sphere" => Objective::sphere(parse_dim("objective", arg)?),
            "rosenbrock" => Objective::rosenbrock(parse_dim("objective", arg)?),
            "rastrigin" => Objective::rastrigin(parse_dim("objective", arg)?),
            "const" => {
                let (dom, value) = arg.split_once('=').ok_or_else(|| {
                    EdaError::config("objective", format!("expected `const:DIM=VALUE`, got `{s}`"))
                })?;
                let value: f64 = value.parse().map_err(|_| {
                    EdaError::config("objective", format!("cannot parse constant `{value}`"))
                })?;
                let domain = if let Some(r) = dom.strip_prefix('r') {
                    Domain::Real { dim: parse_dim("objective", r)? }
                } else if dom.contains('x') {
                    let (dim, arity) = parse_pair(dom)?;
                    Domain::Categorical { dim, arity }
                } else {
                    Domain::Binary { dim: parse_dim("objective", dom)? }
                };
                Objective::constant(domain, value)
            }
            other => {
                return Err(EdaError::config(
                    "objective",
                    format!("unknown objective `{other}`"),
                ))
            }
        };
        Ok(if offset != 0.0 { obj.with_offset(offset) } else { obj })
    }
}
