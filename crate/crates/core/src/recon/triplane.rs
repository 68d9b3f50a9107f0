use crate::error::{Error, Result};

/// Coordinates each plane is indexed by: XY, XZ, YZ.
pub const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

/// Points this far outside the box are snapped onto it instead of rejected,
/// absorbing floating-point noise from ray marching.
const BOX_SLACK: f64 = 1e-9;

/// Three axis-aligned `res × res × channels` feature planes over `[-1, 1]³`.
/// Node `(i, j)` of a plane sits at `-1 + 2·i/(res-1)` along its first axis
/// and `-1 + 2·j/(res-1)` along its second.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    res: usize,
    channels: usize,
    /// Layout `[plane][i][j][channel]`.
    pub data: Vec<f64>,
}

/// Bilinear footprint of one point: four `(data index base, weight)` pairs per plane.
pub type Footprint = [[(usize, f64); 4]; 3];

impl Triplane {
    pub fn new(res: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if res < 2 || channels == 0 {
            return Err(Error::invalid(
                "triplane",
                format!("resolution {res} and {channels} channels; need res ≥ 2 and channels ≥ 1"),
            ));
        }
        if data.len() != 3 * res * res * channels {
            return Err(Error::shape(format!(
                "triplane data has {} values, expected 3×{res}×{res}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            res,
            channels,
            data,
        })
    }

    pub fn zeros(res: usize, channels: usize) -> Result<Self> {
        Self::new(res, channels, vec![0.0; 3 * res * res * channels])
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.channels
    }

    pub fn offset(&self, plane: usize, i: usize, j: usize) -> usize {
        ((plane * self.res + i) * self.res + j) * self.channels
    }

    pub fn node(&self, plane: usize, i: usize, j: usize) -> &[f64] {
        let o = self.offset(plane, i, j);
        &self.data[o..o + self.channels]
    }

    pub fn footprint(&self, p: [f64; 3]) -> Result<Footprint> {
        if p.iter().any(|c| !c.is_finite() || c.abs() > 1.0 + BOX_SLACK) {
            return Err(Error::OutOfBounds(p));
        }
        let scale = (self.res - 1) as f64;
        let cell = |c: f64| {
            let g = (c.clamp(-1.0, 1.0) + 1.0) * 0.5 * scale;
            let i = (g.floor() as usize).min(self.res - 2);
            (i, g - i as f64)
        };
        Ok(std::array::from_fn(|plane| {
            let [a, b] = PLANE_AXES[plane];
            let (i, ti) = cell(p[a]);
            let (j, tj) = cell(p[b]);
            [
                (self.offset(plane, i, j), (1.0 - ti) * (1.0 - tj)),
                (self.offset(plane, i + 1, j), ti * (1.0 - tj)),
                (self.offset(plane, i, j + 1), (1.0 - ti) * tj),
                (self.offset(plane, i + 1, j + 1), ti * tj),
            ]
        }))
    }

    /// Concatenated `[XY | XZ | YZ]` bilinear samples at `p`.
    pub fn sample(&self, p: [f64; 3]) -> Result<Vec<f64>> {
        let fp = self.footprint(p)?;
        let mut out = vec![0.0; self.feature_dim()];
        self.gather(&fp, &mut out);
        Ok(out)
    }

    pub fn gather(&self, fp: &Footprint, out: &mut [f64]) {
        let c = self.channels;
        for (plane, taps) in fp.iter().enumerate() {
            let dst = &mut out[plane * c..(plane + 1) * c];
            dst.fill(0.0);
            for &(base, w) in taps {
                for (d, s) in dst.iter_mut().zip(&self.data[base..base + c]) {
                    *d += w * s;
                }
            }
        }
    }

    /// Adds `∂L/∂feature` at a footprint into a gradient buffer shaped like `data`.
    pub fn scatter(&self, fp: &Footprint, g_feat: &[f64], grad: &mut [f64]) {
        let c = self.channels;
        for (plane, taps) in fp.iter().enumerate() {
            let src = &g_feat[plane * c..(plane + 1) * c];
            for &(base, w) in taps {
                for (d, s) in grad[base..base + c].iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(res: usize, channels: usize) -> Triplane {
        let n = 3 * res * res * channels;
        Triplane::new(res, channels, (0..n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn constant_planes_give_constant_features() {
        let t = Triplane::new(4, 2, vec![0.25; 96]).unwrap();
        for p in [[0.1, -0.3, 0.9], [-1.0, 1.0, 0.0], [0.5, 0.5, 0.5]] {
            assert!(t.sample(p).unwrap().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn node_projection_reads_stored_values() {
        let t = ramp(5, 3);
        // x = node 1, y = node 3, z = node 4
        let p = [-0.5, 0.5, 1.0];
        let f = t.sample(p).unwrap();
        assert_eq!(&f[0..3], t.node(0, 1, 3));
        assert_eq!(&f[3..6], t.node(1, 1, 4));
        assert_eq!(&f[6..9], t.node(2, 3, 4));
    }

    #[test]
    fn out_of_box_is_an_error() {
        let t = ramp(3, 1);
        assert!(matches!(t.sample([1.1, 0.0, 0.0]), Err(Error::OutOfBounds(_))));
        assert!(t.sample([f64::NAN, 0.0, 0.0]).is_err());
        assert!(t.sample([1.0 + 1e-12, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn scatter_is_the_adjoint_of_gather() {
        let t = ramp(4, 2);
        let p = [0.13, -0.71, 0.42];
        let fp = t.footprint(p).unwrap();
        let g: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let mut grad = vec![0.0; t.data.len()];
        t.scatter(&fp, &g, &mut grad);
        // <g, gather(data)> = <scatter(g), data>
        let f = t.sample(p).unwrap();
        let lhs: f64 = f.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = grad.iter().zip(&t.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
