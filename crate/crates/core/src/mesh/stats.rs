use std::collections::HashMap;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeshDefect {
    /// Edge used by exactly one face.
    BoundaryEdge([u32; 2]),
    /// Edge used by more than two faces.
    NonManifoldEdge { edge: [u32; 2], faces: usize },
    /// Two faces traverse the same edge in the same direction.
    InconsistentOrientation([u32; 2]),
    /// Face index out of range.
    InvalidIndex { face: usize, index: u32 },
    /// Face repeating a vertex.
    DegenerateFace(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub watertight: bool,
    pub euler_characteristic: i64,
    /// Signed; positive for outward-facing orientation.
    pub volume: f64,
    pub area: f64,
    pub defects: Vec<MeshDefect>,
}

/// Half-edge pairing, Euler characteristic, divergence-theorem volume and
/// area. Never fails; problems land in `defects`.
pub fn mesh_stats(vertices: &[[f64; 3]], faces: &[[u32; 3]]) -> MeshStats {
    let mut defects = Vec::new();
    let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
    let mut volume = 0.0;
    let mut area = 0.0;
    let mut valid_faces = 0;
    for (fi, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&i| i as usize >= vertices.len()) {
            defects.push(MeshDefect::InvalidIndex {
                face: fi,
                index: bad,
            });
            continue;
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            defects.push(MeshDefect::DegenerateFace(fi));
        }
        valid_faces += 1;
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let cr = [
            (b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1]),
            (b[2] - a[2]) * (c[0] - a[0]) - (b[0] - a[0]) * (c[2] - a[2]),
            (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]),
        ];
        area += 0.5 * (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt();
        volume += (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))
            / 6.0;
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut undirected: HashMap<(u32, u32), usize> = HashMap::new();
    for (&(a, b), &n) in &directed {
        *undirected.entry((a.min(b), a.max(b))).or_default() += n;
    }
    let mut edges: Vec<_> = undirected.iter().map(|(&k, &n)| (k, n)).collect();
    edges.sort_unstable();
    for &((a, b), n) in &edges {
        let fwd = directed.get(&(a, b)).copied().unwrap_or(0);
        let bwd = directed.get(&(b, a)).copied().unwrap_or(0);
        match n {
            1 => defects.push(MeshDefect::BoundaryEdge([a, b])),
            2 if fwd != 1 => defects.push(MeshDefect::InconsistentOrientation([a, b])),
            2 => {}
            _ => defects.push(MeshDefect::NonManifoldEdge {
                edge: [a, b],
                faces: fwd + bwd,
            }),
        }
    }
    MeshStats {
        vertices: vertices.len(),
        edges: edges.len(),
        faces: valid_faces,
        watertight: defects.is_empty() && valid_faces > 0,
        euler_characteristic: vertices.len() as i64 - edges.len() as i64 + valid_faces as i64,
        volume,
        area,
        defects,
    }
}
