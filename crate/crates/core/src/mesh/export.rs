use std::fmt::Write as _;
use std::path::Path;

use super::MeshResult;
use crate::error::Result;

/// `v x y z r g b` lines followed by 1-based `f a b c` lines.
pub fn to_obj(mesh: &MeshResult) -> String {
    let mut s = String::with_capacity(64 * (mesh.vertices().len() + mesh.faces().len()));
    for (p, c) in mesh.vertices().iter().zip(mesh.colors()) {
        writeln!(
            s,
            "v {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            p[0], p[1], p[2], c[0], c[1], c[2]
        )
        .expect("writing to a String cannot fail");
    }
    for f in mesh.faces() {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)
            .expect("writing to a String cannot fail");
    }
    s
}

pub fn write_obj(mesh: &MeshResult, path: &Path) -> Result<()> {
    std::fs::write(path, to_obj(mesh))?;
    Ok(())
}

fn pad_to_4(buf: &mut Vec<u8>, byte: u8) {
    while buf.len() % 4 != 0 {
        buf.push(byte);
    }
}

/// Binary glTF 2.0 with float positions, float vertex colours and u32 indices.
pub fn to_glb(mesh: &MeshResult) -> Vec<u8> {
    let v = mesh.vertices();
    let f = mesh.faces();
    let mut bin = Vec::with_capacity(v.len() * 24 + f.len() * 12);
    for p in v {
        for c in p {
            bin.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    let pos_len = bin.len();
    for c in mesh.colors() {
        for x in c {
            bin.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    let col_len = bin.len() - pos_len;
    for t in f {
        for i in t {
            bin.extend_from_slice(&i.to_le_bytes());
        }
    }
    let idx_len = bin.len() - pos_len - col_len;
    pad_to_4(&mut bin, 0);

    let (mut lo, mut hi) = ([f32::MAX; 3], [f32::MIN; 3]);
    for p in v {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k] as f32);
            hi[k] = hi[k].max(p[k] as f32);
        }
    }
    if v.is_empty() {
        lo = [0.0; 3];
        hi = [0.0; 3];
    }
    let json = serde_json::json!({
        "asset": {"version": "2.0", "generator": "style3d"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [{
            "attributes": {"POSITION": 0, "COLOR_0": 1},
            "indices": 2,
            "mode": 4
        }]}],
        "buffers": [{"byteLength": bin.len()}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": pos_len, "target": 34962},
            {"buffer": 0, "byteOffset": pos_len, "byteLength": col_len, "target": 34962},
            {"buffer": 0, "byteOffset": pos_len + col_len, "byteLength": idx_len, "target": 34963}
        ],
        "accessors": [
            {"bufferView": 0, "componentType": 5126, "count": v.len(), "type": "VEC3",
             "min": lo, "max": hi},
            {"bufferView": 1, "componentType": 5126, "count": v.len(), "type": "VEC3"},
            {"bufferView": 2, "componentType": 5125, "count": f.len() * 3, "type": "SCALAR"}
        ]
    });
    let mut json = serde_json::to_vec(&json).expect("static JSON serialises");
    pad_to_4(&mut json, b' ');

    let total = 12 + 8 + json.len() + 8 + bin.len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(b"glTF");
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(b"JSON");
    out.extend_from_slice(&json);
    out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
    out.extend_from_slice(b"BIN\0");
    out.extend_from_slice(&bin);
    out
}

pub fn write_glb(mesh: &MeshResult, path: &Path) -> Result<()> {
    std::fs::write(path, to_glb(mesh))?;
    Ok(())
}
