use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use super::{config_hash, describe, prepare, sheet::contact_sheet, RunConfig, Staging, Timer, ToolInfo};
use crate::attn::{fused_weights, row_entropy, AttnConfig, Beta};
use crate::diffusion::{build_bank, generate_traced, FeatureBank, GenerateOptions, ViewGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Beta,
    Lambda,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "lambda" => Ok(Self::Lambda),
            other => Err(Error::invalid("param", format!("`{other}` is not beta or lambda"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepValue {
    Beta(Beta),
    Lambda(f64),
}

impl SweepValue {
    pub fn label(&self) -> String {
        match self {
            SweepValue::Beta(b) => format!("beta=({:.2},{:.2})", b.content(), b.preserve()),
            SweepValue::Lambda(l) => format!("lambda={l:.2}"),
        }
    }

    fn dir_name(&self) -> String {
        match self {
            SweepValue::Beta(b) => format!("beta_{:.2}_{:.2}", b.content(), b.preserve()),
            SweepValue::Lambda(l) => format!("lambda_{l:.2}"),
        }
    }

    /// The run config with this value substituted.
    pub fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match *self {
            SweepValue::Beta(b) => c.beta = b,
            SweepValue::Lambda(l) => c.lambda = l,
        }
        c
    }
}

/// Comma-separated values. β items are `c` (complemented) or `c:p`.
pub fn parse_sweep_values(param: SweepParam, list: &str) -> Result<Vec<SweepValue>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid("values", format!("`{}` is not a number", s.trim())))
    };
    let values = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| match param {
            SweepParam::Lambda => Ok(SweepValue::Lambda(num(item)?)),
            SweepParam::Beta => Ok(SweepValue::Beta(match item.split_once(':') {
                Some((c, p)) => Beta::new(num(c)?, num(p)?)?,
                None => Beta::from_content(num(item)?)?,
            })),
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::invalid("values", "no sweep values given"));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub value: SweepValue,
    pub label: String,
    pub dir: PathBuf,
    /// Mean attention-row entropy per hooked layer during generation.
    pub entropy: BTreeMap<String, f64>,
    /// Mean attention-row entropy per hooked layer with the captured
    /// preserve-queries against the captured style keys; isolates the
    /// effect of the swept value from the trajectory it induces.
    pub probe_entropy: BTreeMap<String, f64>,
    pub artifacts: Vec<super::Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub tool: ToolInfo,
    pub param: SweepParam,
    pub config: RunConfig,
    pub config_hash: String,
    pub entries: Vec<SweepEntry>,
    pub contact_sheet: PathBuf,
    #[serde(skip)]
    pub run_dir: PathBuf,
    #[serde(skip)]
    pub grids: Vec<ViewGrid>,
}

fn probe_entropy(bank: &FeatureBank, hooked: &[String], cfg: &AttnConfig) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((layer, t), kv) in bank.entries() {
        if !hooked.contains(layer) || !cfg.is_active(*t) {
            continue;
        }
        let Some(qp) = bank.preserve_query(layer, *t) else { continue };
        let q = qp.data().view();
        let w = fused_weights(q, q, kv.key.data().view(), cfg.beta, cfg.lambda.at(*t))?;
        let rows = row_entropy(w.view());
        let e = acc.entry(layer.clone()).or_default();
        e.0 += rows.iter().sum::<f64>();
        e.1 += rows.len();
    }
    Ok(acc.into_iter().map(|(k, (s, n))| (k, s / n.max(1) as f64)).collect())
}

/// Generates one view set per value from a single captured bank and lays
/// them out on a labelled contact sheet. Every value is validated before
/// any compute.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[SweepValue]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::invalid("values", "no sweep values given"));
    }
    let mut seen = BTreeSet::new();
    for v in values {
        let matches = matches!((param, v), (SweepParam::Beta, SweepValue::Beta(_)) | (SweepParam::Lambda, SweepValue::Lambda(_)));
        if !matches {
            return Err(Error::invalid("values", format!("{} does not belong to a {param:?} sweep", v.label())));
        }
        v.apply(cfg).validate()?;
        if !seen.insert(v.label()) {
            return Err(Error::invalid("values", format!("duplicate value {}", v.label())));
        }
    }

    let mut timer = Timer::default();
    let p = timer.time("prepare", || prepare(cfg))?;
    let hash = config_hash(cfg, &p, &serde_json::to_value((param, values))?)?;
    let name = format!("sweep-{}-{}", serde_json::to_value(param)?.as_str().unwrap_or("x"), &hash[..16]);
    let staging = Staging::new(&cfg.out, &name)?;
    let dir = staging.path().to_path_buf();

    // Capture does not depend on β or λ.
    let bank = timer.time("capture", || {
        build_bank(&p.content, &p.style, &p.backend, &p.attn, cfg.steps, cfg.freeze_preserve_query)
    })?;
    let mut entries = Vec::with_capacity(values.len());
    let mut grids = Vec::with_capacity(values.len());
    for v in values {
        let attn = v.apply(cfg).attn_config()?;
        let opts = GenerateOptions {
            record_entropy: true,
            ..Default::default()
        };
        let gen = timer.time(&format!("generate {}", v.label()), || {
            generate_traced(&p.content, &bank, &p.backend, &attn, cfg.steps, cfg.seed, opts)
        })?;
        let sub = v.dir_name();
        std::fs::create_dir(dir.join(&sub))?;
        let names: Vec<String> = gen
            .grid
            .save(&dir.join(&sub))?
            .iter()
            .map(|f| f.file_name().expect("saved file").to_string_lossy().into_owned())
            .collect();
        entries.push(SweepEntry {
            value: *v,
            label: v.label(),
            dir: PathBuf::from(&sub),
            entropy: gen.entropy.map(|e| e.mean_by_layer()).unwrap_or_default(),
            probe_entropy: probe_entropy(&bank, &p.hooked, &attn)?,
            artifacts: describe(&dir.join(&sub), &names)?,
        });
        grids.push(gen.grid);
    }
    let tiles: Vec<(String, &image::RgbImage)> =
        entries.iter().zip(&grids).map(|(e, g)| (e.label.clone(), &g.tile_image)).collect();
    contact_sheet(&tiles).save(dir.join("contact_sheet.png"))?;

    let mut report = SweepReport {
        tool: ToolInfo::current(),
        param,
        config: cfg.clone(),
        config_hash: hash,
        entries,
        contact_sheet: PathBuf::from("contact_sheet.png"),
        run_dir: PathBuf::new(),
        grids,
    };
    timer.write(&dir.join(super::TIMINGS_FILE))?;
    std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    report.run_dir = staging.commit()?;
    Ok(report)
}
