use regex::Regex;

use super::AttnConfig;
use crate::error::{Error, Result};

/// Attention layers of the last up-sampling block that receive fused attention.
pub const STYLE_INJECTION_LAYERS: [&str; 5] = [
    "up_blocks.3.attentions.0.transformer_blocks.0.attn2",
    "up_blocks.3.attentions.1.transformer_blocks.0.attn1",
    "up_blocks.3.attentions.1.transformer_blocks.0.attn2",
    "up_blocks.3.attentions.2.transformer_blocks.0.attn1",
    "up_blocks.3.attentions.2.transformer_blocks.0.attn2",
];

/// The 32 attention layers of a Stable-Diffusion-2 style U-Net in execution
/// order: 12 down, 2 mid, 18 up.
pub fn backbone_attention_layers() -> Vec<String> {
    let mut names = Vec::with_capacity(32);
    let block = |prefix: &str, attentions: usize, names: &mut Vec<String>| {
        for a in 0..attentions {
            for kind in ["attn1", "attn2"] {
                names.push(format!("{prefix}.attentions.{a}.transformer_blocks.0.{kind}"));
            }
        }
    };
    for b in 0..3 {
        block(&format!("down_blocks.{b}"), 2, &mut names);
    }
    block("mid_block", 1, &mut names);
    for b in 1..4 {
        block(&format!("up_blocks.{b}"), 3, &mut names);
    }
    names
}

/// `*` matches any run of characters (including dots); everything else is literal.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    if !pattern.contains('*') {
        return pattern == name;
    }
    let body = pattern
        .split('*')
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(".*");
    Regex::new(&format!("^{body}$"))
        .map(|re| re.is_match(name))
        .unwrap_or(false)
}

/// Resolves the configured targets against `available`, keeping backbone
/// order. Any configured name or glob that matches nothing is an error.
pub fn select_target_layers(available: &[String], cfg: &AttnConfig) -> Result<Vec<String>> {
    if available.is_empty() {
        return Err(Error::invalid("layers", "backbone exposes no attention layers"));
    }
    let missing: Vec<String> = cfg
        .target_layers
        .iter()
        .filter(|p| !available.iter().any(|n| glob_match(p, n)))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLayers(missing));
    }
    Ok(available
        .iter()
        .filter(|n| cfg.target_layers.iter().any(|p| glob_match(p, n)))
        .cloned()
        .collect())
}
