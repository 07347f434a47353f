use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One named block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl SegmentSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of named segments with precomputed offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<SegmentSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(segments: Vec<SegmentSpec>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for (i, seg) in segments.iter().enumerate() {
            if segments[..i].iter().any(|s| s.name == seg.name) {
                return Err(Error::Config(format!("duplicate segment name `{}`", seg.name)));
            }
            offsets.push(total);
            total += seg.len();
        }
        Ok(Self {
            segments,
            offsets,
            total,
        })
    }

    pub fn segments(&self) -> &[SegmentSpec] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Flat index range of the named segment.
    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.segments
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.offsets[i]..self.offsets[i] + self.segments[i].len())
    }

    /// Union range of every segment whose name starts with `prefix`.
    /// Segments sharing a prefix are assumed contiguous.
    pub fn prefix_range(&self, prefix: &str) -> Option<Range<usize>> {
        let mut out: Option<Range<usize>> = None;
        for (seg, &off) in self.segments.iter().zip(&self.offsets) {
            if seg.name.starts_with(prefix) {
                let r = off..off + seg.len();
                out = Some(match out {
                    None => r,
                    Some(o) => o.start.min(r.start)..o.end.max(r.end),
                });
            }
        }
        out
    }

    /// Name of the segment containing flat index `idx`.
    pub fn segment_of(&self, idx: usize) -> Option<&str> {
        self.segments
            .iter()
            .zip(&self.offsets)
            .find(|(s, &o)| idx >= o && idx < o + s.len())
            .map(|(s, _)| s.name.as_str())
    }

    /// Concatenates two layouts, prefixing segment names.
    pub fn concat(parts: &[(&str, &Layout)]) -> Result<Layout> {
        let segments = parts
            .iter()
            .flat_map(|(prefix, l)| {
                l.segments
                    .iter()
                    .map(move |s| SegmentSpec::new(format!("{prefix}{}", s.name), s.shape.clone()))
            })
            .collect();
        Layout::new(segments)
    }
}

/// Flat vector of 64-bit parameters with a named layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Config(format!(
                "parameter count {} does not match layout size {}",
                values.len(),
                layout.total()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                layout.segment_of(i).unwrap_or("?").to_string(),
                format!("non-finite parameter at index {i}"),
            ));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for in-crate optimizers; callers keep values finite.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.values[r])
    }

    /// Returns a copy with `values` replaced, checking size and finiteness.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    /// Order-sensitive checksum over the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        checksum_values(&self.values)
    }
}

/// Order-sensitive checksum over the raw bits of a slice.
pub fn checksum_values(values: &[f64]) -> u64 {
    values
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, v| crate::seeding::mix64(h ^ v.to_bits()))
}

/// Gradient aligned to a [`ParamVector`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl GradientVector {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            values: vec![0.0; layout.total()],
            layout: layout.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity; 1 when both vectors are zero.
    pub fn cosine(&self, other: &GradientVector) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 && nb == 0.0 {
            return 1.0;
        }
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (self.dot(other) / (na * nb)).clamp(-1.0, 1.0)
    }

    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn block(&self, prefix: &str) -> &[f64] {
        match self.layout.prefix_range(prefix) {
            Some(r) => &self.values[r],
            None => &[],
        }
    }

    /// Fails with the name of the first segment holding a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numerical(
                self.layout.segment_of(i).unwrap_or("?").to_string(),
                format!("non-finite gradient entry at index {i}"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Layout {
        Layout::new(vec![
            SegmentSpec::new("a/w", vec![2, 3]),
            SegmentSpec::new("a/b", vec![2]),
            SegmentSpec::new("b/w", vec![4]),
        ])
        .unwrap()
    }

    #[test]
    fn layout_offsets_and_ranges() {
        let l = layout();
        assert_eq!(l.total(), 12);
        assert_eq!(l.range("a/b"), Some(6..8));
        assert_eq!(l.prefix_range("a/"), Some(0..8));
        assert_eq!(l.prefix_range("b/"), Some(8..12));
        assert_eq!(l.segment_of(9), Some("b/w"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = Layout::new(vec![SegmentSpec::new("x", vec![1]), SegmentSpec::new("x", vec![2])]);
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut v = vec![0.0; 12];
        v[9] = f64::NAN;
        let err = ParamVector::from_values(layout(), v).unwrap_err();
        assert!(err.to_string().contains("b/w"), "{err}");
    }

    #[test]
    fn cosine_edge_cases() {
        let l = layout();
        let z = GradientVector::zeros(&l);
        assert_eq!(z.cosine(&z), 1.0);
        let mut g = GradientVector::zeros(&l);
        g.values[0] = 2.0;
        assert_eq!(g.cosine(&g), 1.0);
        assert_eq!(g.cosine(&z), 0.0);
    }
}
