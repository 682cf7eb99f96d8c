use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{read_pfm_samples, write_pfm_samples};

/// Tolerance on the unit-ball constraint when accepting a bank.
const NORM_SLACK: f64 = 1e-6;

/// `K` learned filters of odd square support. The offset channel's Dirac filter
/// is implicit and appended by the operator when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    size: usize,
    filters: Vec<Array2<f64>>,
    provenance: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    k: usize,
    size: usize,
    #[serde(default)]
    provenance: serde_json::Value,
}

impl FilterBank {
    pub fn new(filters: Vec<Array2<f64>>) -> Result<Self> {
        let size = filters
            .first()
            .map(|f| f.nrows())
            .ok_or_else(|| Error::param("filter bank needs at least one filter"))?;
        if size % 2 == 0 {
            return Err(Error::param(format!("filter size {size} must be odd")));
        }
        for (k, f) in filters.iter().enumerate() {
            if f.dim() != (size, size) {
                return Err(Error::Dimension(format!("filter {k} is not {size}x{size}")));
            }
            let norm2: f64 = f.iter().map(|v| v * v).sum();
            if !norm2.is_finite() || norm2 > 1.0 + NORM_SLACK {
                return Err(Error::param(format!("filter {k} has squared norm {norm2} > 1")));
            }
        }
        Ok(Self {
            size,
            filters,
            provenance: serde_json::Value::Null,
        })
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = provenance;
        self
    }

    /// Number of learned filters.
    pub fn k(&self) -> usize {
        self.filters.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn filters(&self) -> &[Array2<f64>] {
        &self.filters
    }

    pub fn provenance(&self) -> &serde_json::Value {
        &self.provenance
    }

    /// Centered unit impulse of the bank's support.
    pub fn offset_filter(&self) -> Array2<f64> {
        dirac(self.size)
    }

    /// Filters stacked vertically in one 1-channel PFM plus a `.json` header.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut data = Vec::with_capacity(self.k() * self.size * self.size);
        for f in &self.filters {
            data.extend(f.iter().map(|&v| v as f32));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_pfm_samples(self.size, self.size * self.k(), 1, &data, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        let header = BankHeader {
            k: self.k(),
            size: self.size,
            provenance: self.provenance.clone(),
        };
        let sidecar = path.with_extension("json");
        fs::write(&sidecar, serde_json::to_string_pretty(&header)?)
            .map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = path.with_extension("json");
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut BufReader::new(file), &text)
    }

    /// Parses a bank from its PFM raster and JSON header text.
    pub fn read<R: BufRead>(raster: &mut R, header: &str) -> Result<Self> {
        let header: BankHeader = serde_json::from_str(header)?;
        let (w, h, c, data) = read_pfm_samples(raster)?;
        if c != 1 || w != header.size || h != header.size * header.k {
            return Err(Error::format(
                "filter bank",
                format!("{w}x{h}x{c} raster does not hold {} filters of size {}", header.k, header.size),
            ));
        }
        let stack = Array2::from_shape_vec((h, w), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::format("filter bank", e.to_string()))?;
        let filters = (0..header.k)
            .map(|k| stack.slice(s![k * w..(k + 1) * w, ..]).to_owned())
            .collect();
        Ok(Self::new(filters)?.with_provenance(header.provenance))
    }

    /// The shipped bank: 100 filters of 11x11 learned from contrast-normalized
    /// dead-leaves textures (see the bank's provenance for the exact run).
    pub fn bundled() -> Self {
        const RASTER: &[u8] = include_bytes!("../../assets/dead_leaves_k100_s11.pfm");
        const HEADER: &str = include_str!("../../assets/dead_leaves_k100_s11.json");
        Self::read(&mut &RASTER[..], HEADER).expect("bundled filter bank is well formed")
    }
}

pub fn dirac(size: usize) -> Array2<f64> {
    let mut d = Array2::zeros((size, size));
    d[[size / 2, size / 2]] = 1.0;
    d
}

/// Coefficient rasters. When `has_offset` is set the last map is the smooth
/// offset channel; the others are the sparse maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    maps: Vec<Array2<f64>>,
    has_offset: bool,
}

impl FeatureMaps {
    pub fn new(maps: Vec<Array2<f64>>, has_offset: bool) -> Result<Self> {
        let dim = maps
            .first()
            .map(|m| m.dim())
            .ok_or_else(|| Error::param("feature maps cannot be empty"))?;
        if maps.iter().any(|m| m.dim() != dim) {
            return Err(Error::Dimension("feature maps differ in shape".into()));
        }
        if has_offset && maps.len() < 2 {
            return Err(Error::param("an offset channel needs at least one sparse map"));
        }
        Ok(Self { maps, has_offset })
    }

    pub fn zeros(count: usize, height: usize, width: usize, has_offset: bool) -> Self {
        Self {
            maps: vec![Array2::zeros((height, width)); count],
            has_offset,
        }
    }

    pub fn maps(&self) -> &[Array2<f64>] {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.maps
    }

    pub fn into_maps(self) -> Vec<Array2<f64>> {
        self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.maps[0].dim()
    }

    pub fn has_offset(&self) -> bool {
        self.has_offset
    }

    pub fn sparse_maps(&self) -> &[Array2<f64>] {
        let n = self.maps.len() - usize::from(self.has_offset);
        &self.maps[..n]
    }

    pub fn offset(&self) -> Option<&Array2<f64>> {
        self.has_offset.then(|| &self.maps[self.maps.len() - 1])
    }

    /// Count of sparse coefficients with magnitude above `threshold`.
    pub fn active_count(&self, threshold: f64) -> usize {
        self.sparse_maps()
            .iter()
            .map(|m| m.iter().filter(|v| v.abs() > threshold).count())
            .sum()
    }

    /// Sum of absolute values over the sparse maps.
    pub fn l1_norm(&self) -> f64 {
        self.sparse_maps()
            .iter()
            .map(|m| m.iter().map(|v| v.abs()).sum::<f64>())
            .sum()
    }
}
