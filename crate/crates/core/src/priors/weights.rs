use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The six loss terms in weight order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Image,
    Mask,
    Sliding,
    Penetration,
    Continuity,
    Smoothness,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::Image,
        Term::Mask,
        Term::Sliding,
        Term::Penetration,
        Term::Continuity,
        Term::Smoothness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Image => "image",
            Term::Mask => "mask",
            Term::Sliding => "sliding",
            Term::Penetration => "penetration",
            Term::Continuity => "continuity",
            Term::Smoothness => "smoothness",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// λ1..λ6 for (image, mask, sliding, penetration, continuity, smoothness).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub image: f64,
    pub mask: f64,
    pub sliding: f64,
    pub penetration: f64,
    pub continuity: f64,
    pub smoothness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            image: 0.1,
            mask: 0.3,
            sliding: 0.005,
            penetration: 0.001,
            continuity: 1.0,
            smoothness: 0.1,
        }
    }
}

impl LossWeights {
    /// Default weights with the squared-length temporal terms rescaled for
    /// centimetre units (×1e-4).
    pub fn centimetres() -> Self {
        let d = LossWeights::default();
        LossWeights {
            continuity: d.continuity * 1e-4,
            smoothness: d.smoothness * 1e-4,
            ..d
        }
    }

    pub fn zero() -> Self {
        LossWeights::from_array([0.0; 6])
    }

    /// Rendering priors only; physics weights zeroed.
    pub fn render_only(self) -> Self {
        LossWeights {
            sliding: 0.0,
            penetration: 0.0,
            continuity: 0.0,
            smoothness: 0.0,
            ..self
        }
    }

    pub fn only(term: Term) -> Self {
        let mut w = [0.0; 6];
        w[term.index()] = 1.0;
        LossWeights::from_array(w)
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        LossWeights {
            image: w[0],
            mask: w[1],
            sliding: w[2],
            penetration: w[3],
            continuity: w[4],
            smoothness: w[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.image,
            self.mask,
            self.sliding,
            self.penetration,
            self.continuity,
            self.smoothness,
        ]
    }

    pub fn get(&self, term: Term) -> f64 {
        self.to_array()[term.index()]
    }

    pub fn scaled(&self, s: f64) -> Self {
        LossWeights::from_array(self.to_array().map(|w| w * s))
    }

    pub fn validate(&self) -> Result<()> {
        for t in Term::ALL {
            let w = self.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight for {} must be finite and >= 0", t.name())));
            }
        }
        Ok(())
    }
}
