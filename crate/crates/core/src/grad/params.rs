use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::model::PoseState;
use crate::{Error, Result};

/// Named block of the packed parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Span {
    Theta,
    Beta,
    ObjR,
    ObjT,
}

impl Span {
    pub const ALL: [Span; 4] = [Span::Theta, Span::Beta, Span::ObjR, Span::ObjT];

    pub fn name(self) -> &'static str {
        match self {
            Span::Theta => "theta",
            Span::Beta => "beta",
            Span::ObjR => "obj_r",
            Span::ObjT => "obj_t",
        }
    }
}

/// Packed layout `[θ | β | r | t]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub theta_len: usize,
    pub beta_len: usize,
}

impl ParamLayout {
    pub fn new(theta_len: usize, beta_len: usize) -> Self {
        ParamLayout { theta_len, beta_len }
    }

    pub fn len(&self) -> usize {
        self.theta_len + self.beta_len + 6
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self, span: Span) -> Range<usize> {
        let t = self.theta_len;
        let b = t + self.beta_len;
        match span {
            Span::Theta => 0..t,
            Span::Beta => t..b,
            Span::ObjR => b..b + 3,
            Span::ObjT => b + 3..b + 6,
        }
    }

    pub fn span_of(&self, index: usize) -> Option<Span> {
        Span::ALL.into_iter().find(|s| self.range(*s).contains(&index))
    }
}

/// Which spans are held fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeMask {
    pub theta: bool,
    pub beta: bool,
    pub obj_r: bool,
    pub obj_t: bool,
}

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn hand_only() -> Self {
        FreezeMask {
            theta: true,
            beta: true,
            ..Default::default()
        }
    }

    pub fn is_frozen(&self, span: Span) -> bool {
        match span {
            Span::Theta => self.theta,
            Span::Beta => self.beta,
            Span::ObjR => self.obj_r,
            Span::ObjT => self.obj_t,
        }
    }
}

/// Flat optimisation vector with its layout and frozen spans.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
    frozen: FreezeMask,
}

impl ParamVector {
    pub fn pack(state: &PoseState, frozen: FreezeMask) -> Self {
        let layout = ParamLayout::new(state.theta.len(), state.beta.len());
        let mut values = Vec::with_capacity(layout.len());
        values.extend_from_slice(&state.theta);
        values.extend_from_slice(&state.beta);
        values.extend_from_slice(&state.obj_r);
        values.extend_from_slice(&state.obj_t);
        ParamVector { values, layout, frozen }
    }

    pub fn from_values(values: Vec<f64>, layout: ParamLayout, frozen: FreezeMask) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout, frozen })
    }

    /// Exact inverse of [`ParamVector::pack`]; angles are not re-wrapped.
    pub fn unpack(&self) -> PoseState {
        let l = &self.layout;
        let r = &self.values[l.range(Span::ObjR)];
        let t = &self.values[l.range(Span::ObjT)];
        PoseState {
            theta: self.values[l.range(Span::Theta)].to_vec(),
            beta: self.values[l.range(Span::Beta)].to_vec(),
            obj_r: [r[0], r[1], r[2]],
            obj_t: [t[0], t[1], t[2]],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn frozen(&self) -> &FreezeMask {
        &self.frozen
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn span(&self, span: Span) -> &[f64] {
        &self.values[self.layout.range(span)]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::from_values(values, self.layout, self.frozen)
    }

    /// Per-entry flag: true where the entry may change.
    pub fn active_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.len()];
        for s in Span::ALL {
            if self.frozen.is_frozen(s) {
                for i in self.layout.range(s) {
                    m[i] = false;
                }
            }
        }
        m
    }

    pub fn zero_frozen(&self, gradient: &mut [f64]) {
        for s in Span::ALL {
            if self.frozen.is_frozen(s) {
                for g in &mut gradient[self.layout.range(s)] {
                    *g = 0.0;
                }
            }
        }
    }
}

/// Scalar value with its gradient over a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// A scalar function of the packed parameters that supplies its gradient.
pub trait Objective {
    fn name(&self) -> &str {
        "objective"
    }

    fn value_and_gradient(&self, params: &ParamVector) -> Result<(f64, Vec<f64>)>;

    fn value(&self, params: &ParamVector) -> Result<f64> {
        self.value_and_gradient(params).map(|(v, _)| v)
    }
}

/// Evaluates `loss` and its gradient; frozen spans are zeroed.
pub fn evaluate_with_gradient(loss: &dyn Objective, params: &ParamVector) -> Result<GradResult> {
    let (value, mut gradient) = loss.value_and_gradient(params)?;
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: loss.name().to_string(),
        });
    }
    if gradient.len() != params.len() {
        return Err(Error::Dimension {
            what: "gradient",
            expected: params.len(),
            got: gradient.len(),
        });
    }
    params.zero_frozen(&mut gradient);
    Ok(GradResult { value, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Constant;
    impl Objective for Constant {
        fn value_and_gradient(&self, p: &ParamVector) -> Result<(f64, Vec<f64>)> {
            Ok((3.0, vec![0.0; p.len()]))
        }
    }

    struct TranslationNorm;
    impl Objective for TranslationNorm {
        fn value_and_gradient(&self, p: &ParamVector) -> Result<(f64, Vec<f64>)> {
            let t = p.span(Span::ObjT);
            let mut g = vec![0.0; p.len()];
            for (i, k) in p.layout().range(Span::ObjT).enumerate() {
                g[k] = 2.0 * t[i];
            }
            Ok((t.iter().map(|x| x * x).sum(), g))
        }
    }

    struct Nan;
    impl Objective for Nan {
        fn name(&self) -> &str {
            "nan_term"
        }
        fn value_and_gradient(&self, p: &ParamVector) -> Result<(f64, Vec<f64>)> {
            Ok((f64::NAN, vec![0.0; p.len()]))
        }
    }

    fn state() -> PoseState {
        PoseState {
            theta: vec![0.1; 54],
            beta: vec![0.2; 10],
            obj_r: [0.1, 0.2, 0.3],
            obj_t: [1.0, -2.0, 3.0],
        }
    }

    #[test]
    fn toy_hand_layout_length() {
        let p = ParamVector::pack(&state(), FreezeMask::none());
        assert_eq!(p.len(), 70);
        assert_eq!(p.layout().range(Span::ObjT), 67..70);
        assert_eq!(p.layout().span_of(60), Some(Span::Beta));
    }

    #[test]
    fn constant_and_quadratic_losses() {
        let p = ParamVector::pack(&state(), FreezeMask::none());
        let c = evaluate_with_gradient(&Constant, &p).unwrap();
        assert!(c.gradient.iter().all(|&g| g == 0.0));
        let q = evaluate_with_gradient(&TranslationNorm, &p).unwrap();
        assert_eq!(q.value, 14.0);
        assert_eq!(&q.gradient[67..], &[2.0, -4.0, 6.0]);
        assert!(q.gradient[..67].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_spans_get_zero_gradient() {
        let frozen = FreezeMask {
            obj_t: true,
            ..Default::default()
        };
        let p = ParamVector::pack(&state(), frozen);
        let q = evaluate_with_gradient(&TranslationNorm, &p).unwrap();
        assert!(q.gradient.iter().all(|&g| g == 0.0));
        assert_eq!(p.unpack(), state());
    }

    #[test]
    fn non_finite_reports_term() {
        let p = ParamVector::pack(&state(), FreezeMask::none());
        match evaluate_with_gradient(&Nan, &p) {
            Err(Error::NonFinite { term }) => assert_eq!(term, "nan_term"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(
            theta in proptest::collection::vec(-5.0f64..5.0, 0..20),
            beta in proptest::collection::vec(-5.0f64..5.0, 0..12),
            r in proptest::array::uniform3(-10.0f64..10.0),
            t in proptest::array::uniform3(-100.0f64..100.0),
            freeze_beta in any::<bool>(),
        ) {
            let s = PoseState { theta, beta, obj_r: r, obj_t: t };
            let frozen = FreezeMask { beta: freeze_beta, ..Default::default() };
            let p = ParamVector::pack(&s, frozen);
            prop_assert_eq!(p.unpack(), s);
            prop_assert_eq!(p.frozen().beta, freeze_beta);
        }
    }
}
