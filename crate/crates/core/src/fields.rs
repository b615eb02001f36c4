//! Grid data types shared by every other module.
//!
//! Storage is 32-bit, reductions accumulate in 64-bit. Grid coordinates used
//! for transport costs are normalized to the unit square: cell `(i, j)` sits at
//! `((i + 0.5) / H, (j + 0.5) / W)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Height and width of a regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    height: usize,
    width: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Shape(format!(
                "grid must be at least 2x2, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Row-major flat index.
    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    /// Normalized coordinates of a cell center, both in (0, 1).
    #[inline]
    pub fn coord(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (row as f64 + 0.5) / self.height as f64,
            (col as f64 + 0.5) / self.width as f64,
        )
    }

    /// Squared Euclidean distance between two cells in normalized coordinates.
    #[inline]
    pub fn sq_dist(&self, a: usize, b: usize) -> f64 {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        let dr = (ra as f64 - rb as f64) / self.height as f64;
        let dc = (ca as f64 - cb as f64) / self.width as f64;
        dr * dr + dc * dc
    }
}

fn check_finite(values: &[f32], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// A scalar field on a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    spec: GridSpec,
    values: Vec<f32>,
}

impl Field2D {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != spec.cells() {
            return Err(Error::Shape(format!(
                "field has {} values, grid needs {}",
                values.len(),
                spec.cells()
            )));
        }
        check_finite(&values, "field")?;
        Ok(Self { spec, values })
    }

    /// Builds a field from 64-bit values, rounding to storage precision.
    pub fn from_f64(spec: GridSpec, values: &[f64]) -> Result<Self> {
        Self::new(spec, values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.cells()],
        }
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(spec.cells());
        for r in 0..spec.height() {
            for c in 0..spec.width() {
                values.push(f(r, c));
            }
        }
        Self::new(spec, values)
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[self.spec.index(row, col)]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn abs_sum(&self) -> f64 {
        self.values.iter().map(|&v| math::abs(v as f64)).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Pointwise product with a measure (used for barycenter masking).
    pub fn mul_measure(&self, mask: &SpatialMeasure) -> Result<Field2D> {
        if mask.spec() != self.spec {
            return Err(Error::Shape("field and measure grids differ".into()));
        }
        let values = self
            .values
            .iter()
            .zip(mask.density())
            .map(|(&g, &m)| (g as f64 * m) as f32)
            .collect();
        Field2D::new(self.spec, values)
    }
}

/// Multi-channel state, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    spec: GridSpec,
    channels: usize,
    values: Vec<f32>,
}

impl StateTensor {
    pub fn new(spec: GridSpec, channels: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("state needs at least one channel".into()));
        }
        if values.len() != spec.cells() * channels {
            return Err(Error::Shape(format!(
                "state has {} values, expected {}x{}x{}",
                values.len(),
                spec.height(),
                spec.width(),
                channels
            )));
        }
        check_finite(&values, "state")?;
        Ok(Self {
            spec,
            channels,
            values,
        })
    }

    pub fn zeros(spec: GridSpec, channels: usize) -> Result<Self> {
        Self::new(spec, channels, vec![0.0; spec.cells() * channels])
    }

    pub fn from_f64(spec: GridSpec, channels: usize, values: &[f64]) -> Result<Self> {
        Self::new(spec, channels, values.iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            Err(Error::Channel {
                channel,
                channels: self.channels,
            })
        } else {
            Ok(())
        }
    }

    pub fn channel_slice(&self, channel: usize) -> Result<&[f32]> {
        self.check_channel(channel)?;
        let n = self.spec.cells();
        Ok(&self.values[channel * n..(channel + 1) * n])
    }

    pub fn channel(&self, channel: usize) -> Result<Field2D> {
        Ok(Field2D {
            spec: self.spec,
            values: self.channel_slice(channel)?.to_vec(),
        })
    }

    /// Copy with one channel replaced; the other channels are bit-identical.
    pub fn with_channel(&self, channel: usize, field: &Field2D) -> Result<StateTensor> {
        self.check_channel(channel)?;
        if field.spec() != self.spec {
            return Err(Error::Shape("replacement channel grid differs".into()));
        }
        let n = self.spec.cells();
        let mut out = self.clone();
        out.values[channel * n..(channel + 1) * n].copy_from_slice(field.values());
        Ok(out)
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.values[channel * self.spec.cells() + self.spec.index(row, col)]
    }
}

/// Non-negative, unit-mass density over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMeasure {
    spec: GridSpec,
    density: Vec<f64>,
}

pub const MEASURE_MASS_TOL: f64 = 1e-9;

impl SpatialMeasure {
    /// Validates an already-normalized density.
    pub fn new(spec: GridSpec, density: Vec<f64>) -> Result<Self> {
        if density.len() != spec.cells() {
            return Err(Error::Shape(format!(
                "density has {} entries, grid needs {}",
                density.len(),
                spec.cells()
            )));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Domain("density must be finite and >= 0".into()));
        }
        let mass: f64 = density.iter().sum();
        if math::abs(mass - 1.0) > MEASURE_MASS_TOL {
            return Err(Error::Domain(format!("density sums to {mass}, not 1")));
        }
        Ok(Self { spec, density })
    }

    /// Normalizes a non-negative vector to unit mass.
    pub fn from_weights(spec: GridSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Domain("weights must be finite and >= 0".into()));
        }
        Self::new(spec, l1_normalize_abs(&weights)?)
    }

    /// Measure `|values| / sum |values|` of raw 64-bit attribution values.
    pub fn from_abs(spec: GridSpec, values: &[f64]) -> Result<Self> {
        if values.len() != spec.cells() {
            return Err(Error::Shape("value count does not match grid".into()));
        }
        Self::new(spec, l1_normalize_abs(values)?)
    }

    pub fn uniform(spec: GridSpec) -> Self {
        let n = spec.cells();
        Self {
            spec,
            density: vec![1.0 / n as f64; n],
        }
    }

    pub fn dirac(spec: GridSpec, row: usize, col: usize) -> Self {
        let mut density = vec![0.0; spec.cells()];
        density[spec.index(row, col)] = 1.0;
        Self { spec, density }
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    pub fn to_field(&self) -> Field2D {
        Field2D {
            spec: self.spec,
            values: self.density.iter().map(|&d| d as f32).collect(),
        }
    }

    /// Total-variation distance `0.5 * sum |a - b|`.
    pub fn total_variation(&self, other: &SpatialMeasure) -> f64 {
        0.5 * self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| math::abs(a - b))
            .sum::<f64>()
    }

    /// Mass-weighted mean (row, col) in cell units.
    pub fn centroid(&self) -> (f64, f64) {
        let w = self.spec.width();
        let (mut r, mut c) = (0.0, 0.0);
        for (k, &d) in self.density.iter().enumerate() {
            r += d * (k / w) as f64;
            c += d * (k % w) as f64;
        }
        (r, c)
    }
}

/// `|v| / sum |v|`, accumulated in 64-bit.
pub fn l1_normalize_abs(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attribution"));
    }
    let total: f64 = values.iter().map(|&v| math::abs(v)).sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(values.iter().map(|&v| math::abs(v) / total).collect())
}

/// Converts an attribution map into a spatial measure by ℓ1-normalizing its
/// absolute values. Zero maps are rejected rather than replaced by a uniform
/// density.
pub fn normalize_to_measure(g: &Field2D) -> Result<SpatialMeasure> {
    SpatialMeasure::from_abs(g.spec(), &g.to_f64())
}

/// Inclusive rectangular region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoiBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl RoiBox {
    pub fn new(row_min: usize, row_max: usize, col_min: usize, col_max: usize) -> Result<Self> {
        if row_min > row_max || col_min > col_max {
            return Err(Error::Domain("empty region of interest".into()));
        }
        Ok(Self {
            row_min,
            row_max,
            col_min,
            col_max,
        })
    }

    pub fn full(spec: GridSpec) -> Self {
        Self {
            row_min: 0,
            row_max: spec.height() - 1,
            col_min: 0,
            col_max: spec.width() - 1,
        }
    }

    pub fn cell(row: usize, col: usize) -> Self {
        Self {
            row_min: row,
            row_max: row,
            col_min: col,
            col_max: col,
        }
    }

    pub fn check(&self, spec: GridSpec) -> Result<()> {
        if self.row_min > self.row_max
            || self.col_min > self.col_max
            || self.row_max >= spec.height()
            || self.col_max >= spec.width()
        {
            return Err(Error::OutOfBounds {
                what: "roi",
                height: spec.height(),
                width: spec.width(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    /// Row-major flat indices of the cells inside the box.
    pub fn indices(&self, spec: GridSpec) -> impl Iterator<Item = usize> + '_ {
        (self.row_min..=self.row_max)
            .flat_map(move |r| (self.col_min..=self.col_max).map(move |c| spec.index(r, c)))
    }
}

/// Mean of `f` over `roi`. Its gradient with respect to `f` is `1/|B|` inside
/// the box and zero elsewhere.
pub fn roi_mean(f: &Field2D, roi: &RoiBox) -> Result<f64> {
    roi.check(f.spec())?;
    let sum: f64 = roi.indices(f.spec()).map(|k| f.values[k] as f64).sum();
    Ok(sum / roi.len() as f64)
}

/// Per-channel standardization `(x - mean) / std`.
pub fn zscore(x: &StateTensor, mean: &[f64], std: &[f64]) -> Result<StateTensor> {
    if mean.len() != x.channels() || std.len() != x.channels() {
        return Err(Error::Shape("statistics length must equal channel count".into()));
    }
    if let Some((channel, &value)) = std.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::DegenerateStat { channel, value });
    }
    let n = x.spec().cells();
    let values: Vec<f64> = x
        .values()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let c = k / n;
            (v as f64 - mean[c]) / std[c]
        })
        .collect();
    StateTensor::from_f64(x.spec(), x.channels(), &values)
}

/// Magic bytes of the raster format.
pub const RASTER_MAGIC: &[u8; 4] = b"WGRD";
pub const RASTER_VERSION: u8 = 1;
pub const RASTER_HEADER_LEN: usize = 20;

/// Encodes a state as a version-1 raster: magic, version, three reserved zero
/// bytes, little-endian `u32` H, W, C, then `H*W*C` little-endian `f32`
/// (channel-major, then row-major).
pub fn encode_raster(t: &StateTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(RASTER_HEADER_LEN + 4 * t.values.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.push(RASTER_VERSION);
    out.extend_from_slice(&[0, 0, 0]);
    for dim in [t.spec.height(), t.spec.width(), t.channels] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &t.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_raster`].
pub fn decode_raster(bytes: &[u8]) -> Result<StateTensor> {
    if bytes.len() < RASTER_HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != RASTER_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != RASTER_VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    if bytes[5..8] != [0, 0, 0] {
        return Err(Error::Format("reserved bytes must be zero".into()));
    }
    let dim = |k: usize| {
        let o = 8 + 4 * k;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let payload = &bytes[RASTER_HEADER_LEN..];
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(Error::Format(format!(
            "header declares {count} values but payload has {} bytes",
            payload.len()
        )));
    }
    let spec = GridSpec::new(h, w).map_err(|e| Error::Format(format!("{e}")))?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite payload value".into()));
    }
    StateTensor::new(spec, c, values).map_err(|e| Error::Format(format!("{e}")))
}
