//! Velocity fields and the sources the integrators consume.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::state::StateVec;

/// Condition label. `Null` is the unconditional label used as the CFG base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Null,
    Class(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Null => f.write_str("null"),
            Label::Class(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("null") {
            return Ok(Label::Null);
        }
        s.parse::<usize>()
            .map(Label::Class)
            .map_err(|_| Error::UnknownLabel(s.to_string()))
    }
}

/// A conditional velocity field `v(x, t, c)`.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &StateVec, t: f64, label: Label) -> Result<StateVec>;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn velocity(&self, x: &StateVec, t: f64, label: Label) -> Result<StateVec> {
        (**self).velocity(x, t, label)
    }
}

/// Classifier-free guidance `(1 - omega) v(x, base) + omega v(x, target)`.
///
/// Always evaluates the field exactly twice. Written in this form so that
/// `omega = 1` returns `v(x, target)` and `omega = 0` returns `v(x, base)`
/// bit-for-bit.
pub fn cfg_velocity<F: VelocityField + ?Sized>(
    field: &F,
    x: &StateVec,
    t: f64,
    base: Label,
    target: Label,
    omega: f64,
) -> Result<StateVec> {
    let vb = field.velocity(x, t, base)?;
    let vt = field.velocity(x, t, target)?;
    Ok(StateVec::new(
        vb.iter()
            .zip(vt.iter())
            .map(|(b, c)| (1.0 - omega) * b + omega * c)
            .collect(),
    ))
}

/// Wraps a field and counts evaluations (NFE).
pub struct CountingField<'a, F: ?Sized> {
    inner: &'a F,
    calls: Cell<u64>,
}

impl<'a, F: VelocityField + ?Sized> CountingField<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        CountingField {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }
}

impl<F: VelocityField + ?Sized> VelocityField for CountingField<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn velocity(&self, x: &StateVec, t: f64, label: Label) -> Result<StateVec> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(x, t, label)
    }
}

/// State-independent field returning a fixed vector per label.
///
/// With such a field every Euler scheme is exact, which makes it the
/// reference case for reduction and residual checks.
#[derive(Debug, Clone)]
pub struct ConstantField {
    dim: usize,
    values: Vec<(Label, StateVec)>,
}

impl ConstantField {
    pub fn new(values: Vec<(Label, StateVec)>) -> Result<Self> {
        let dim = values
            .first()
            .map(|(_, v)| v.dim())
            .ok_or_else(|| Error::invalid("constant field needs at least one label"))?;
        for (_, v) in &values {
            v.check_dim(dim)?;
        }
        Ok(ConstantField { dim, values })
    }
}

impl VelocityField for ConstantField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &StateVec, _t: f64, label: Label) -> Result<StateVec> {
        x.check_dim(self.dim)?;
        self.values
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

/// An unconditional field `(x, t) -> v` as consumed by the integrators.
pub trait VelocitySource {
    fn dim(&self) -> usize;
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec>;
}

/// A conditional field with its label fixed.
pub struct Conditioned<'a, F: ?Sized> {
    pub field: &'a F,
    pub label: Label,
}

impl<'a, F: VelocityField + ?Sized> Conditioned<'a, F> {
    pub fn new(field: &'a F, label: Label) -> Self {
        Conditioned { field, label }
    }
}

impl<F: VelocityField + ?Sized> VelocitySource for Conditioned<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.field.velocity(x, t, self.label)
    }
}

/// CFG combination of two labels of one field.
pub struct Guided<'a, F: ?Sized> {
    pub field: &'a F,
    pub base: Label,
    pub target: Label,
    pub omega: f64,
}

impl<'a, F: VelocityField + ?Sized> Guided<'a, F> {
    pub fn new(field: &'a F, base: Label, target: Label, omega: f64) -> Self {
        Guided {
            field,
            base,
            target,
            omega,
        }
    }
}

impl<F: VelocityField + ?Sized> VelocitySource for Guided<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        cfg_velocity(self.field, x, t, self.base, self.target, self.omega)
    }
}

/// Closure-backed source.
pub struct FnSource<G> {
    dim: usize,
    f: G,
}

impl<G: Fn(&StateVec, f64) -> Result<StateVec>> FnSource<G> {
    pub fn new(dim: usize, f: G) -> Self {
        FnSource { dim, f }
    }
}

impl<G: Fn(&StateVec, f64) -> Result<StateVec>> VelocitySource for FnSource<G> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        (self.f)(x, t)
    }
}
