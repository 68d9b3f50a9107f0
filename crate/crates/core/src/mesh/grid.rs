use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the zero level set counts as the object interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    PositiveInside,
    NegativeInside,
}

impl SignConvention {
    /// `+1` for positive-inside, `-1` otherwise.
    pub fn sign(self) -> f64 {
        match self {
            SignConvention::PositiveInside => 1.0,
            SignConvention::NegativeInside => -1.0,
        }
    }

    /// Re-expresses `s` so that positive means inside.
    pub fn inside_positive(self, s: f64) -> f64 {
        self.sign() * s
    }

    pub fn flipped(self) -> Self {
        match self {
            SignConvention::PositiveInside => SignConvention::NegativeInside,
            SignConvention::NegativeInside => SignConvention::PositiveInside,
        }
    }
}

impl std::str::FromStr for SignConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive_inside" | "positive-inside" => Ok(SignConvention::PositiveInside),
            "negative_inside" | "negative-inside" => Ok(SignConvention::NegativeInside),
            other => Err(Error::invalid(
                "sign_convention",
                format!("`{other}` is not positive_inside or negative_inside"),
            )),
        }
    }
}

/// Maps a raw weight to a positive FlexiCubes weight in `(0.01, 1.99)`;
/// a raw value of 0 is neutral (weight 1).
pub fn weight_activation(raw: f64) -> f64 {
    1.0 + 0.99 * raw.tanh()
}

pub fn weight_activation_grad(raw: f64) -> f64 {
    let t = raw.tanh();
    0.99 * (1.0 - t * t)
}

/// Weights of one cell, derived from its corner raw weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellWeights {
    /// Per-corner interpolation weights.
    pub alpha: [f64; 8],
    /// Per-edge dual-vertex weights.
    pub beta: [f64; 12],
    /// Quad-splitting weight.
    pub gamma: f64,
}

/// Scalar field on a regular `res³` vertex lattice spanning `[-1, 1]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    res: usize,
    values: Vec<f64>,
    deformations: Vec<[f64; 3]>,
    weights: Vec<f64>,
    pub convention: SignConvention,
}

pub const BOX_MIN: f64 = -1.0;
pub const BOX_MAX: f64 = 1.0;

impl SdfGrid {
    /// Deformations are clamped to half a cell per axis. `weights` are raw
    /// per-vertex values; 0 is neutral.
    pub fn new(
        res: usize,
        values: Vec<f64>,
        deformations: Vec<[f64; 3]>,
        weights: Vec<f64>,
        convention: SignConvention,
    ) -> Result<Self> {
        if res < 2 {
            return Err(Error::invalid("grid resolution", "needs at least 2 vertices per axis"));
        }
        let n = res * res * res;
        if values.len() != n || deformations.len() != n || weights.len() != n {
            return Err(Error::shape(format!(
                "grid of {res}³ needs {n} values, deformations and weights, got {}, {}, {}",
                values.len(),
                deformations.len(),
                weights.len()
            )));
        }
        if values.iter().chain(weights.iter()).any(|v| !v.is_finite())
            || deformations.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("sdf grid".into()));
        }
        let half = 0.5 * cell_size(res);
        let deformations = deformations
            .into_iter()
            .map(|d| d.map(|c| c.clamp(-half, half)))
            .collect();
        Ok(Self {
            res,
            values,
            deformations,
            weights,
            convention,
        })
    }

    /// Undeformed grid with neutral weights.
    pub fn neutral(res: usize, values: Vec<f64>, convention: SignConvention) -> Result<Self> {
        let n = values.len();
        Self::new(res, values, vec![[0.0; 3]; n], vec![0.0; n], convention)
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(
        res: usize,
        convention: SignConvention,
        f: impl Fn([f64; 3]) -> f64,
    ) -> Result<Self> {
        if res < 2 {
            return Err(Error::invalid("grid resolution", "needs at least 2 vertices per axis"));
        }
        let values = (0..res * res * res)
            .map(|i| f(lattice_point(res, unflatten(res, i))))
            .collect();
        Self::neutral(res, values, convention)
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn cell(&self) -> f64 {
        cell_size(self.res)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn deformations(&self) -> &[[f64; 3]] {
        &self.deformations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.res + j) * self.res + k
    }

    /// Deformed position of lattice vertex `v`.
    pub fn position(&self, v: usize) -> [f64; 3] {
        let p = lattice_point(self.res, unflatten(self.res, v));
        let d = self.deformations[v];
        [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
    }

    /// Value with positive meaning inside.
    pub fn inside_value(&self, v: usize) -> f64 {
        self.convention.inside_positive(self.values[v])
    }

    pub fn cell_weights(&self, corner_vertices: &[usize; 8]) -> CellWeights {
        let raw = corner_vertices.map(|v| self.weights[v]);
        let beta = std::array::from_fn(|e| {
            let [a, b] = super::tables::EDGES[e];
            weight_activation(0.5 * (raw[a] + raw[b]))
        });
        CellWeights {
            alpha: raw.map(weight_activation),
            beta,
            gamma: weight_activation(raw.iter().sum::<f64>() / 8.0),
        }
    }

    /// Same geometry with every value negated and the convention kept, which
    /// swaps inside and outside.
    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

pub fn cell_size(res: usize) -> f64 {
    (BOX_MAX - BOX_MIN) / (res - 1) as f64
}

pub fn unflatten(res: usize, v: usize) -> [usize; 3] {
    [v / (res * res), (v / res) % res, v % res]
}

pub fn lattice_point(res: usize, ijk: [usize; 3]) -> [f64; 3] {
    let c = cell_size(res);
    ijk.map(|i| BOX_MIN + i as f64 * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deformation_is_clamped_to_half_a_cell() {
        let res = 3;
        let n = 27;
        let g = SdfGrid::new(
            res,
            vec![1.0; n],
            vec![[5.0, -5.0, 0.1]; n],
            vec![0.0; n],
            SignConvention::PositiveInside,
        )
        .unwrap();
        let half = 0.5 * g.cell();
        assert!(g
            .deformations()
            .iter()
            .all(|d| d[0] == half && d[1] == -half && d[2] == 0.1f64.min(half)));
    }

    #[test]
    fn rejects_small_and_non_finite() {
        assert!(SdfGrid::neutral(1, vec![0.0], SignConvention::PositiveInside).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(SdfGrid::neutral(2, v, SignConvention::PositiveInside).is_err());
    }

    #[test]
    fn neutral_weights_are_one() {
        let g = SdfGrid::neutral(2, vec![0.0; 8], SignConvention::PositiveInside).unwrap();
        let w = g.cell_weights(&[0, 1, 2, 3, 4, 5, 6, 7]);
        assert!(w.alpha.iter().chain(w.beta.iter()).all(|&a| a == 1.0));
        assert_eq!(w.gamma, 1.0);
    }

    #[test]
    fn lattice_spans_the_box() {
        assert_eq!(lattice_point(5, [0, 0, 0]), [-1.0; 3]);
        assert_eq!(lattice_point(5, [4, 4, 4]), [1.0; 3]);
        assert_eq!(unflatten(5, (2 * 5 + 3) * 5 + 1), [2, 3, 1]);
    }
}
