//! Surface extraction from a signed-distance lattice, mesh diagnostics and
//! export.

mod export;
mod extract;
mod grid;
mod stats;
pub mod tables;

pub use export::{to_glb, to_obj, write_glb, write_obj};
pub use extract::{
    cell_patches, extract_mesh, extract_mesh_traced, extraction_backward, DualVertexTrace,
    ExtractionTrace, GridGrad, MIN_TRIANGLE_AREA,
};
pub use grid::{
    cell_size, lattice_point, unflatten, weight_activation, weight_activation_grad, CellWeights,
    SdfGrid, SignConvention, BOX_MAX, BOX_MIN,
};
pub use stats::{mesh_stats, MeshDefect, MeshStats};

use crate::error::{Error, Result};

pub const DEFAULT_VERTEX_COLOR: [f64; 3] = [0.7, 0.7, 0.7];

/// Triangle mesh with per-vertex colours. Statistics are computed from the
/// current geometry on every call.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshResult {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    colors: Vec<[f64; 3]>,
}

impl MeshResult {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Self {
        let colors = vec![DEFAULT_VERTEX_COLOR; vertices.len()];
        Self {
            vertices,
            faces,
            colors,
        }
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    /// Colours are clamped to `[0, 1]`.
    pub fn set_colors(&mut self, colors: Vec<[f64; 3]>) -> Result<()> {
        if colors.len() != self.vertices.len() {
            return Err(Error::shape(format!(
                "{} colours for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = colors
            .into_iter()
            .map(|c| c.map(|x| x.clamp(0.0, 1.0)))
            .collect();
        Ok(())
    }

    pub fn stats(&self) -> MeshStats {
        mesh_stats(&self.vertices, &self.faces)
    }

    /// Same surface with every face wound the other way.
    pub fn flipped(&self) -> Self {
        Self {
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            ..self.clone()
        }
    }
}

/// `mean ‖δ / cell‖² + mean raw_weight²`: zero exactly on a neutral grid.
pub fn flexi_regularizer(grid: &SdfGrid) -> f64 {
    let n = grid.values().len() as f64;
    let c = grid.cell();
    let d: f64 = grid
        .deformations()
        .iter()
        .flatten()
        .map(|x| (x / c) * (x / c))
        .sum();
    let w: f64 = grid.weights().iter().map(|x| x * x).sum();
    d / n + w / n
}

/// Gradient of [`flexi_regularizer`] with respect to deformations and raw
/// weights. The values receive none.
pub fn flexi_regularizer_grad(grid: &SdfGrid) -> GridGrad {
    let n = grid.values().len();
    let c2 = grid.cell() * grid.cell();
    let mut g = GridGrad::zeros(n);
    for (gd, d) in g.deformations.iter_mut().zip(grid.deformations()) {
        *gd = d.map(|x| 2.0 * x / (c2 * n as f64));
    }
    for (gw, w) in g.weights.iter_mut().zip(grid.weights()) {
        *gw = 2.0 * w / n as f64;
    }
    g
}
