use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::field::{FieldHeads, HeadsLayout, TriplaneField};
use super::triplane::Triplane;
use crate::error::{Error, Result};

/// Shape manifest stored in the checkpoint metadata under `manifest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    /// `[3, R, R, C]`.
    pub triplane: [usize; 4],
    pub heads: HeadsLayout,
    pub head_params: usize,
}

pub const CHECKPOINT_FORMAT: &str = "style3d-triplane-field/1";

fn to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn save_checkpoint(field: &TriplaneField, path: &Path) -> Result<()> {
    let tp = &field.triplane;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        triplane: [3, tp.res(), tp.res(), tp.channels()],
        heads: field.heads.layout,
        head_params: field.heads.params.len(),
    };
    let tb = to_bytes(&tp.data);
    let hb = to_bytes(&field.heads.params);
    let ck = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
    let views = vec![
        ("triplane", TensorView::new(Dtype::F64, manifest.triplane.to_vec(), &tb).map_err(ck)?),
        ("heads", TensorView::new(Dtype::F64, vec![manifest.head_params], &hb).map_err(ck)?),
    ];
    let meta: HashMap<String, String> =
        [("manifest".to_string(), serde_json::to_string(&manifest)?)].into_iter().collect();
    let bytes = safetensors::serialize(views, &Some(meta)).map_err(ck)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TriplaneField> {
    let bytes = std::fs::read(path)?;
    let fail = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| fail(e.to_string()))?;
    let manifest: CheckpointManifest = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get("manifest"))
        .ok_or_else(|| fail("no shape manifest".into()))
        .and_then(|s| serde_json::from_str(s).map_err(|e| fail(e.to_string())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(fail(format!("unknown format `{}`", manifest.format)));
    }
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| fail(e.to_string()))?;
    let read = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let t = tensors.tensor(name).map_err(|_| fail(format!("missing tensor `{name}`")))?;
        if t.dtype() != Dtype::F64 || t.shape() != shape {
            return Err(fail(format!(
                "tensor `{name}` is {:?} {:?}, manifest says F64 {shape:?}",
                t.dtype(),
                t.shape()
            )));
        }
        Ok(t.data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    };
    let [three, r, r2, c] = manifest.triplane;
    if three != 3 || r != r2 {
        return Err(fail(format!("triplane shape {:?}", manifest.triplane)));
    }
    let triplane = Triplane::new(r, c, read("triplane", &manifest.triplane)?)?;
    let heads = FieldHeads::from_params(manifest.heads, read("heads", &[manifest.head_params])?)?;
    TriplaneField::new(triplane, heads)
}
