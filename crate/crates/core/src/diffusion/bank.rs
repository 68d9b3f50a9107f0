//! Captured attention features and the processors that record or inject them.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

use super::unet::{AttnCall, AttnProcessor};
use crate::attn::{
    attend, fuse_attention_arrays, fused_weights, native_scale, row_entropy, AttnConfig,
    FeatureKind, FeatureTensor,
};
use crate::error::{Error, Result};

pub type BankKey = (String, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct KeyValue {
    pub key: FeatureTensor,
    pub value: FeatureTensor,
}

/// `(layer, timestep)`-indexed style keys/values and content preserve-queries.
/// Immutable once captured.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBank {
    entries: BTreeMap<BankKey, KeyValue>,
    preserve_queries: BTreeMap<BankKey, FeatureTensor>,
    /// When set, every lookup of a preserve-query returns the one captured at
    /// the lowest timestep of that layer.
    pub freeze_preserve_query: bool,
}

impl FeatureBank {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.preserve_queries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<BankKey, KeyValue> {
        &self.entries
    }

    pub fn preserve_queries(&self) -> &BTreeMap<BankKey, FeatureTensor> {
        &self.preserve_queries
    }

    pub fn insert_kv(&mut self, key: FeatureTensor, value: FeatureTensor) -> Result<()> {
        if key.layer_id() != value.layer_id() || key.timestep() != value.timestep() {
            return Err(Error::shape("key and value come from different captures"));
        }
        if key.tokens() != value.tokens() {
            return Err(Error::shape(format!(
                "{} keys but {} values for `{}`",
                key.tokens(),
                value.tokens(),
                key.layer_id()
            )));
        }
        let k = (key.layer_id().to_string(), key.timestep());
        self.entries.insert(k, KeyValue { key, value });
        Ok(())
    }

    pub fn insert_preserve_query(&mut self, q: FeatureTensor) {
        self.preserve_queries
            .insert((q.layer_id().to_string(), q.timestep()), q);
    }

    /// Union of a style bank (keys/values) and a content bank (preserve-queries).
    pub fn combine(style: FeatureBank, content: FeatureBank) -> FeatureBank {
        let mut out = style;
        out.preserve_queries.extend(content.preserve_queries);
        out.freeze_preserve_query |= content.freeze_preserve_query;
        out
    }

    pub fn key_value(&self, layer: &str, timestep: usize) -> Option<&KeyValue> {
        self.entries.get(&(layer.to_string(), timestep))
    }

    pub fn preserve_query(&self, layer: &str, timestep: usize) -> Option<&FeatureTensor> {
        if self.freeze_preserve_query {
            self.preserve_queries
                .range((layer.to_string(), 0)..=(layer.to_string(), usize::MAX))
                .next()
                .map(|(_, q)| q)
        } else {
            self.preserve_queries.get(&(layer.to_string(), timestep))
        }
    }

    /// Fails on the first `(layer, timestep)` pair, in layer then sampling
    /// order, that lacks either keys/values or a preserve-query.
    pub fn check_complete(&self, layers: &[String], timesteps: &[usize]) -> Result<()> {
        for layer in layers {
            for &t in timesteps {
                if self.key_value(layer, t).is_none() {
                    return Err(Error::IncompleteBank {
                        what: "key/value",
                        layer: layer.clone(),
                        timestep: t,
                    });
                }
                if self.preserve_query(layer, t).is_none() {
                    return Err(Error::IncompleteBank {
                        what: "preserve-query",
                        layer: layer.clone(),
                        timestep: t,
                    });
                }
            }
        }
        Ok(())
    }
}

/// What a capture pass records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureRole {
    /// Keys and values of the style pass.
    Style,
    /// Queries of the content-conditioned pass.
    Content,
}

/// Runs native attention everywhere and records features at target layers
/// on active timesteps.
pub struct CaptureProcessor<'a> {
    pub targets: BTreeSet<String>,
    pub cfg: &'a AttnConfig,
    pub role: CaptureRole,
    pub bank: FeatureBank,
}

impl AttnProcessor for CaptureProcessor<'_> {
    fn process(
        &mut self,
        call: &AttnCall<'_>,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        if self.targets.contains(call.layer) && self.cfg.is_active(call.timestep) {
            let t = call.timestep;
            match self.role {
                CaptureRole::Style => self.bank.insert_kv(
                    FeatureTensor::new(k.clone(), call.layer, t, FeatureKind::Key)?,
                    FeatureTensor::new(v.clone(), call.layer, t, FeatureKind::Value)?,
                )?,
                CaptureRole::Content => self.bank.insert_preserve_query(FeatureTensor::new(
                    q.clone(),
                    call.layer,
                    t,
                    FeatureKind::QueryPreserve,
                )?),
            }
        }
        attend(q.view(), k.view(), v.view(), native_scale(q.ncols()))
    }
}

/// Per-layer running mean of attention-row entropy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntropyLog {
    sums: BTreeMap<String, (f64, usize)>,
}

impl EntropyLog {
    fn add(&mut self, layer: &str, rows: &[f64]) {
        let e = self.sums.entry(layer.to_string()).or_insert((0.0, 0));
        e.0 += rows.iter().sum::<f64>();
        e.1 += rows.len();
    }

    pub fn mean_by_layer(&self) -> BTreeMap<String, f64> {
        self.sums
            .iter()
            .map(|(k, &(s, n))| (k.clone(), s / n.max(1) as f64))
            .collect()
    }
}

/// Replaces attention at target layers on active timesteps with fused
/// attention over the bank; every other call stays native.
pub struct FusionProcessor<'a> {
    pub targets: BTreeSet<String>,
    pub cfg: &'a AttnConfig,
    pub bank: &'a FeatureBank,
    pub entropy: Option<EntropyLog>,
}

impl<'a> FusionProcessor<'a> {
    pub fn new(targets: &[String], cfg: &'a AttnConfig, bank: &'a FeatureBank) -> Self {
        Self {
            targets: targets.iter().cloned().collect(),
            cfg,
            bank,
            entropy: None,
        }
    }

    pub fn with_entropy_probe(mut self) -> Self {
        self.entropy = Some(EntropyLog::default());
        self
    }
}

impl AttnProcessor for FusionProcessor<'_> {
    fn process(
        &mut self,
        call: &AttnCall<'_>,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let t = call.timestep;
        if !(self.targets.contains(call.layer) && self.cfg.is_active(t)) {
            return attend(q.view(), k.view(), v.view(), native_scale(q.ncols()));
        }
        let incomplete = |what| Error::IncompleteBank {
            what,
            layer: call.layer.to_string(),
            timestep: t,
        };
        let kv = self
            .bank
            .key_value(call.layer, t)
            .ok_or_else(|| incomplete("key/value"))?;
        let qp = self
            .bank
            .preserve_query(call.layer, t)
            .ok_or_else(|| incomplete("preserve-query"))?;
        if let Some(log) = self.entropy.as_mut() {
            let w = fused_weights(
                q.view(),
                qp.data().view(),
                kv.key.data().view(),
                self.cfg.beta,
                self.cfg.lambda.at(t),
            )?;
            log.add(call.layer, &row_entropy(w.view()));
        }
        fuse_attention_arrays(
            q.view(),
            qp.data().view(),
            kv.key.data().view(),
            kv.value.data().view(),
            self.cfg,
            t,
        )
    }
}

/// Wraps a processor and keeps a copy of every attention output it produces.
pub struct RecordingProcessor<P> {
    pub inner: P,
    pub outputs: BTreeMap<BankKey, Array2<f64>>,
}

impl<P> RecordingProcessor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            outputs: BTreeMap::new(),
        }
    }
}

impl<P: AttnProcessor> AttnProcessor for RecordingProcessor<P> {
    fn process(
        &mut self,
        call: &AttnCall<'_>,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let out = self.inner.process(call, q, k, v)?;
        self.outputs
            .insert((call.layer.to_string(), call.timestep), out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(layer: &str, t: usize, kind: FeatureKind, fill: f64) -> FeatureTensor {
        FeatureTensor::new(Array2::from_elem((2, 3), fill), layer, t, kind).unwrap()
    }

    #[test]
    fn completeness_names_first_missing_key() {
        let mut bank = FeatureBank::default();
        bank.insert_kv(
            tensor("a", 5, FeatureKind::Key, 1.0),
            tensor("a", 5, FeatureKind::Value, 2.0),
        )
        .unwrap();
        bank.insert_preserve_query(tensor("a", 5, FeatureKind::QueryPreserve, 0.0));
        let layers = vec!["a".to_string()];
        bank.check_complete(&layers, &[5]).unwrap();
        match bank.check_complete(&layers, &[5, 3]) {
            Err(Error::IncompleteBank { layer, timestep, .. }) => {
                assert_eq!((layer.as_str(), timestep), ("a", 3))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frozen_preserve_query_uses_lowest_timestep() {
        let mut bank = FeatureBank::default();
        bank.insert_preserve_query(tensor("a", 9, FeatureKind::QueryPreserve, 9.0));
        bank.insert_preserve_query(tensor("a", 2, FeatureKind::QueryPreserve, 2.0));
        bank.insert_preserve_query(tensor("b", 1, FeatureKind::QueryPreserve, 1.0));
        assert!(bank.preserve_query("a", 5).is_none());
        bank.freeze_preserve_query = true;
        assert_eq!(bank.preserve_query("a", 5).unwrap().data()[[0, 0]], 2.0);
        assert!(bank.preserve_query("c", 5).is_none());
    }

    #[test]
    fn mismatched_kv_rejected() {
        let mut bank = FeatureBank::default();
        assert!(bank
            .insert_kv(
                tensor("a", 1, FeatureKind::Key, 1.0),
                tensor("a", 2, FeatureKind::Value, 1.0)
            )
            .is_err());
    }
}
