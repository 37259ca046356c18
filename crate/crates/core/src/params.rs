//! Flat model parameters with a named per-layer layout.
//!
//! Optimizers and diagnostics address parameters either as one flat array or
//! layer by layer. A [`LayerLayout`] names contiguous, non-overlapping spans
//! of the flat array; [`ParamVector`] and [`UpdateDelta`] carry a shared
//! layout handle so layer arithmetic stays cheap.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named contiguous span of the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered named spans covering the whole parameter array.
///
/// Entries are contiguous, non-overlapping, ascending, and their lengths sum
/// to the total parameter count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl LayerLayout {
    /// Build a layout from `(name, length)` pairs. Offsets are assigned
    /// contiguously in iteration order.
    pub fn from_lengths<I, S>(lengths: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut offset = 0usize;
        for (name, len) in lengths {
            let name = name.into();
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate layer name: {name}")));
            }
            if len == 0 {
                return Err(Error::InvalidConfig(format!("layer {name} has zero length")));
            }
            entries.push(LayoutEntry { name, offset, len });
            offset += len;
        }
        Ok(Self { entries, total: offset })
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    /// Total parameter count M.
    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Result<&LayoutEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Index range of a named layer in the flat array.
    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        let e = self.entry(name)?;
        Ok(e.offset..e.offset + e.len)
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

/// What an [`UpdateDelta`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    ClientDelta,
    AggregatedDelta,
    PseudoGradient,
}

/// Flat model parameters plus their layout.
///
/// A published `ParamVector` is treated as immutable; mutation happens only
/// inside the single context that owns it (an optimizer step or a local
/// training loop), so copies can be handed to concurrent client workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<LayerLayout>,
}

/// A client delta, aggregated delta, or pseudo-gradient over the same layout
/// as the model it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDelta {
    pub values: Vec<f64>,
    pub layout: Arc<LayerLayout>,
    pub kind: DeltaKind,
}

/// Per-layer and global L2 norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorms {
    pub per_layer: Vec<(String, f64)>,
    pub global: f64,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<LayerLayout>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                context: "ParamVector::new".into(),
                expected: layout.total_len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        let n = layout.total_len();
        Self { values: vec![0.0; n], layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// NaN/Inf anywhere marks the vector corrupt.
    pub fn check_finite(&self) -> Result<()> {
        check_finite_by_layer(&self.values, &self.layout, "params")
    }
}

impl UpdateDelta {
    pub fn new(values: Vec<f64>, layout: Arc<LayerLayout>, kind: DeltaKind) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                context: "UpdateDelta::new".into(),
                expected: layout.total_len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout, kind })
    }

    /// `params_after - params_before`, tagged as a client delta.
    pub fn from_difference(after: &ParamVector, before: &ParamVector) -> Result<Self> {
        if !Arc::ptr_eq(after.layout(), before.layout()) && after.layout() != before.layout() {
            return Err(Error::LayoutMismatch("delta endpoints".into()));
        }
        let values = after
            .values()
            .iter()
            .zip(before.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self { values, layout: Arc::clone(after.layout()), kind: DeltaKind::ClientDelta })
    }

    /// Negate an aggregated delta into the pseudo-gradient the central
    /// optimizer descends on. With a central SGD at learning rate 1 this
    /// reproduces plain averaging.
    pub fn to_pseudo_gradient(&self) -> UpdateDelta {
        UpdateDelta {
            values: self.values.iter().map(|v| -v).collect(),
            layout: Arc::clone(&self.layout),
            kind: DeltaKind::PseudoGradient,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// View over one layer's values.
pub fn layer_slice<'a>(p: &'a ParamVector, layer_name: &str) -> Result<&'a [f64]> {
    let r = p.layout().range(layer_name)?;
    Ok(&p.values()[r])
}

/// Mutable view over one layer's values.
pub fn layer_slice_mut<'a>(p: &'a mut ParamVector, layer_name: &str) -> Result<&'a mut [f64]> {
    let r = p.layout.range(layer_name)?;
    Ok(&mut p.values[r])
}

fn check_finite_by_layer(values: &[f64], layout: &LayerLayout, what: &str) -> Result<()> {
    for e in layout.entries() {
        if values[e.offset..e.offset + e.len].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what}, layer {}", e.name)));
        }
    }
    Ok(())
}

/// Per-layer L2 norms plus the global norm (root of the sum of squared
/// per-layer norms).
pub fn axpy_norms(p: &ParamVector) -> Result<LayerNorms> {
    p.check_finite()?;
    let mut per_layer = Vec::with_capacity(p.layout().entries().len());
    let mut total_sq = 0.0;
    for e in p.layout().entries() {
        let sq: f64 = p.values()[e.offset..e.offset + e.len]
            .iter()
            .map(|v| v * v)
            .sum();
        per_layer.push((e.name.clone(), sq.sqrt()));
        total_sq += sq;
    }
    Ok(LayerNorms { per_layer, global: total_sq.sqrt() })
}

/// L2 norm of a flat slice.
pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSQCKPT1";

/// Write a checkpoint. The format is binary (f64 bit patterns), so a
/// write/read round trip is bit-exact.
pub fn write_checkpoint<P: AsRef<Path>>(path: P, p: &ParamVector) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + p.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let entries = p.layout().entries();
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u64).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.extend_from_slice(&(e.offset as u64).to_le_bytes());
        buf.extend_from_slice(&(e.len as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in p.values() {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<P: AsRef<Path>>(path: P) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::CorruptCheckpoint("truncated file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u64 = |pos: &mut usize| -> Result<u64> {
        let s = take(pos, 8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    };

    if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let n_entries = read_u64(&mut pos)? as usize;
    let mut lengths = Vec::with_capacity(n_entries);
    let mut offsets = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = read_u64(&mut pos)? as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("layer name not utf-8".into()))?
            .to_string();
        let offset = read_u64(&mut pos)? as usize;
        let len = read_u64(&mut pos)? as usize;
        offsets.push(offset);
        lengths.push((name, len));
    }
    let layout = LayerLayout::from_lengths(lengths)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    for (e, stored) in layout.entries().iter().zip(&offsets) {
        if e.offset != *stored {
            return Err(Error::CorruptCheckpoint("non-contiguous offsets".into()));
        }
    }
    let n_values = read_u64(&mut pos)? as usize;
    if n_values != layout.total_len() {
        return Err(Error::CorruptCheckpoint("value count does not match layout".into()));
    }
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        let bits = read_u64(&mut pos)?;
        values.push(f64::from_bits(bits));
    }
    if pos != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    ParamVector::new(values, Arc::new(layout))
}
