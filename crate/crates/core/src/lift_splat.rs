//! Forward view transformation: lift image features into a depth-weighted
//! pseudo point cloud and sum-pool the points into a Cartesian BEV grid.
//!
//! BEV maps are stored row-major as `[ix][iy][c]`: the first axis indexes
//! ego x, the second ego y. Cell `(ix, iy)` covers
//! `[−E + ix·s, −E + (ix+1)·s) × [−E + iy·s, −E + (iy+1)·s)` with `s = 2E/H_B`.

use serde::{Deserialize, Serialize};

use crate::depth::DepthBinSpec;
use crate::error::{Error, Result};
use crate::geometry::{Camera, CartesianPoint};

const DEPTH_SUM_TOL: f64 = 1e-5;

/// Adds `scale · bilinear(data, r, c)` to `out`, with zero padding and sample
/// coordinates aligned so that integer `(r, c)` hits a cell centre.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bilinear_accumulate(
    data: &[f64],
    rows: usize,
    cols: usize,
    channels: usize,
    r: f64,
    c: f64,
    scale: f64,
    out: &mut [f64],
) {
    if !(r.is_finite() && c.is_finite()) {
        return;
    }
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let taps = [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1.0, (1.0 - fr) * fc),
        (r0 + 1.0, c0, fr * (1.0 - fc)),
        (r0 + 1.0, c0 + 1.0, fr * fc),
    ];
    for (tr, tc, w) in taps {
        if w == 0.0 || tr < 0.0 || tc < 0.0 || tr >= rows as f64 || tc >= cols as f64 {
            continue;
        }
        let base = (tr as usize * cols + tc as usize) * channels;
        for (o, v) in out.iter_mut().zip(&data[base..base + channels]) {
            *o += scale * w * v;
        }
    }
}

/// Per-view, per-scale image features on a grid `stride` pixels apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureMap {
    pub view: usize,
    pub scale: usize,
    height: usize,
    width: usize,
    channels: usize,
    stride: u32,
    data: Vec<f64>,
}

impl ImageFeatureMap {
    pub fn new(
        view: usize,
        scale: usize,
        height: usize,
        width: usize,
        channels: usize,
        stride: u32,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if stride < 1 {
            return Err(Error::invariant("feature stride must be >= 1"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image feature map"));
        }
        Ok(ImageFeatureMap {
            view,
            scale,
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    pub fn zeros(view: usize, scale: usize, height: usize, width: usize, channels: usize, stride: u32) -> Result<Self> {
        ImageFeatureMap::new(view, scale, height, width, channels, stride, vec![0.0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let base = (row * self.width + col) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Input-image pixel at the centre of a feature cell.
    pub fn cell_center_pixel(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    /// Adds `scale · bilinear(F, (u, v) / stride)` into `out`.
    pub fn sample_pixel_into(&self, u: f64, v: f64, scale: f64, out: &mut [f64]) {
        let s = self.stride as f64;
        bilinear_accumulate(
            &self.data,
            self.height,
            self.width,
            self.channels,
            v / s - 0.5,
            u / s - 0.5,
            scale,
            out,
        );
    }
}

/// Per-cell categorical distribution over depth bins.
///
/// Cells whose weights sum to zero carry no mass (no depth observed there).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    height: usize,
    width: usize,
    bins: usize,
    data: Vec<f64>,
}

impl DepthDistribution {
    /// Validates and, where a cell's weights are off by more than `1e-5`,
    /// renormalizes them with a warning.
    pub fn new(height: usize, width: usize, bins: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * bins || bins == 0 {
            return Err(Error::Shape(format!(
                "depth distribution {height}x{width}x{bins} needs {} values, got {}",
                height * width * bins,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("depth distribution"));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::invariant("depth distribution weights must be non-negative"));
        }
        let mut fixed = 0usize;
        for cell in data.chunks_exact_mut(bins) {
            let sum: f64 = cell.iter().sum();
            if sum > 0.0 && (sum - 1.0).abs() > DEPTH_SUM_TOL {
                cell.iter_mut().for_each(|v| *v /= sum);
                fixed += 1;
            }
        }
        if fixed > 0 {
            log::warn!("renormalized {fixed} depth distribution cells whose weights did not sum to 1");
        }
        Ok(DepthDistribution {
            height,
            width,
            bins,
            data,
        })
    }

    /// One-hot distribution from per-cell depths; `None` marks cells without depth.
    pub fn one_hot(height: usize, width: usize, depths: &[Option<f64>], spec: &DepthBinSpec) -> Result<Self> {
        if depths.len() != height * width {
            return Err(Error::Shape(format!(
                "depth map {height}x{width} needs {} values, got {}",
                height * width,
                depths.len()
            )));
        }
        let k = spec.num_bins();
        let mut data = vec![0.0; height * width * k];
        for (i, d) in depths.iter().enumerate() {
            if let Some(d) = d {
                data[i * k + spec.depth_to_bin(*d)] = 1.0;
            }
        }
        DepthDistribution::new(height, width, k, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.bins;
        &self.data[base..base + self.bins]
    }
}

/// Where a lifted point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointSource {
    pub view: usize,
    pub row: usize,
    pub col: usize,
    pub bin: usize,
}

/// Lifted points, stored column-wise. Point `i` contributes
/// `weights[i] · features[i·C..(i+1)·C]` to the BEV cell containing it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoPointCloud {
    channels: usize,
    positions: Vec<CartesianPoint>,
    features: Vec<f64>,
    weights: Vec<f64>,
    sources: Vec<PointSource>,
}

impl PseudoPointCloud {
    pub fn new(channels: usize) -> Self {
        PseudoPointCloud {
            channels,
            ..Default::default()
        }
    }

    pub fn push(&mut self, position: CartesianPoint, feature: &[f64], weight: f64, source: PointSource) -> Result<()> {
        if feature.len() != self.channels {
            return Err(Error::Shape(format!(
                "point feature has {} channels, cloud has {}",
                feature.len(),
                self.channels
            )));
        }
        if !position.is_finite() || !weight.is_finite() {
            return Err(Error::NonFinite("pseudo point"));
        }
        if weight < 0.0 {
            return Err(Error::invariant("pseudo point weight must be non-negative"));
        }
        self.positions.push(position);
        self.features.extend_from_slice(feature);
        self.weights.push(weight);
        self.sources.push(source);
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> CartesianPoint {
        self.positions[i]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn source(&self, i: usize) -> PointSource {
        self.sources[i]
    }

    /// Appends another cloud, keeping its point order.
    pub fn extend(&mut self, other: &PseudoPointCloud) -> Result<()> {
        if other.channels != self.channels {
            return Err(Error::Shape("cannot merge clouds with different channel counts".into()));
        }
        self.positions.extend_from_slice(&other.positions);
        self.features.extend_from_slice(&other.features);
        self.weights.extend_from_slice(&other.weights);
        self.sources.extend_from_slice(&other.sources);
        Ok(())
    }
}

/// Square BEV grid over `[−E, E]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BevGridRecord", into = "BevGridRecord")]
pub struct BevGridSpec {
    extent: f64,
    resolution: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BevGridRecord {
    pub extent: f64,
    pub resolution: usize,
}

impl BevGridSpec {
    pub fn new(extent: f64, resolution: usize) -> Result<Self> {
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::invariant(format!("BEV extent must be positive, got {extent}")));
        }
        if resolution == 0 {
            return Err(Error::invariant("BEV resolution must be >= 1"));
        }
        Ok(BevGridSpec { extent, resolution })
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    /// Cell containing `(x, y)`, or `None` outside `[−E, E)²`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let s = self.cell_size();
        let fx = ((x + self.extent) / s).floor();
        let fy = ((y + self.extent) / s).floor();
        let n = self.resolution as f64;
        if fx >= 0.0 && fx < n && fy >= 0.0 && fy < n {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let s = self.cell_size();
        (
            -self.extent + (ix as f64 + 0.5) * s,
            -self.extent + (iy as f64 + 0.5) * s,
        )
    }
}

impl TryFrom<BevGridRecord> for BevGridSpec {
    type Error = Error;

    fn try_from(r: BevGridRecord) -> Result<Self> {
        BevGridSpec::new(r.extent, r.resolution)
    }
}

impl From<BevGridSpec> for BevGridRecord {
    fn from(s: BevGridSpec) -> Self {
        BevGridRecord {
            extent: s.extent,
            resolution: s.resolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevFeatureMap {
    spec: BevGridSpec,
    channels: usize,
    data: Vec<f64>,
}

impl BevFeatureMap {
    pub fn zeros(spec: BevGridSpec, channels: usize) -> Self {
        let n = spec.resolution();
        BevFeatureMap {
            spec,
            channels,
            data: vec![0.0; n * n * channels],
        }
    }

    pub fn from_data(spec: BevGridSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        let n = spec.resolution();
        if data.len() != n * n * channels {
            return Err(Error::Shape(format!(
                "BEV map {n}x{n}x{channels} needs {} values, got {}",
                n * n * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("BEV map"));
        }
        Ok(BevFeatureMap { spec, channels, data })
    }

    pub fn spec(&self) -> &BevGridSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &[f64] {
        let base = (ix * self.spec.resolution() + iy) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn cell_mut(&mut self, ix: usize, iy: usize) -> &mut [f64] {
        let base = (ix * self.spec.resolution() + iy) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Adds `scale · bilinear(F, (x, y))` into `out`; outside the grid the
    /// map reads as zero.
    pub fn sample_into(&self, x: f64, y: f64, scale: f64, out: &mut [f64]) {
        let s = self.spec.cell_size();
        let e = self.spec.extent();
        let n = self.spec.resolution();
        bilinear_accumulate(
            &self.data,
            n,
            n,
            self.channels,
            (x + e) / s - 0.5,
            (y + e) / s - 0.5,
            scale,
            out,
        );
    }

    /// Per-channel sum over all cells.
    pub fn channel_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for cell in self.data.chunks_exact(self.channels.max(1)) {
            for (s, v) in sums.iter_mut().zip(cell) {
                *s += v;
            }
        }
        sums
    }
}

/// Lifts every feature cell into one point per depth bin, placed at the
/// back-projection of the cell centre at the bin-centre depth. Bins with zero
/// probability emit no point.
pub fn lift(
    cam: &Camera,
    feat: &ImageFeatureMap,
    depth: &DepthDistribution,
    bins: &DepthBinSpec,
) -> Result<PseudoPointCloud> {
    if feat.height() != depth.height() || feat.width() != depth.width() {
        return Err(Error::Shape(format!(
            "feature map {}x{} and depth distribution {}x{} differ",
            feat.height(),
            feat.width(),
            depth.height(),
            depth.width()
        )));
    }
    if depth.bins() != bins.num_bins() {
        return Err(Error::Shape(format!(
            "depth distribution has {} bins, spec has {}",
            depth.bins(),
            bins.num_bins()
        )));
    }
    let centers: Vec<f64> = (0..bins.num_bins())
        .map(|l| bins.bin_center(l))
        .collect::<Result<_>>()?;
    let mut cloud = PseudoPointCloud::new(feat.channels());
    for row in 0..feat.height() {
        for col in 0..feat.width() {
            let (u, v) = feat.cell_center_pixel(row, col);
            let f = feat.cell(row, col);
            for (bin, (&p, &d)) in depth.cell(row, col).iter().zip(&centers).enumerate() {
                if p == 0.0 {
                    continue;
                }
                let source = PointSource {
                    view: feat.view,
                    row,
                    col,
                    bin,
                };
                cloud.push(cam.back_project(u, v, d), f, p, source)?;
            }
        }
    }
    Ok(cloud)
}

/// Accumulates `weight · feature` of each point into its cell, in point order.
pub fn splat_into(bev: &mut BevFeatureMap, points: &PseudoPointCloud) -> Result<()> {
    if points.channels() != bev.channels() {
        return Err(Error::Shape(format!(
            "cloud has {} channels, BEV map has {}",
            points.channels(),
            bev.channels()
        )));
    }
    let spec = *bev.spec();
    for i in 0..points.len() {
        let p = points.position(i);
        let Some((ix, iy)) = spec.cell_of(p.x, p.y) else {
            continue;
        };
        let w = points.weight(i);
        for (acc, f) in bev.cell_mut(ix, iy).iter_mut().zip(points.feature(i)) {
            *acc += w * f;
        }
    }
    Ok(())
}

pub fn splat(points: &PseudoPointCloud, spec: &BevGridSpec) -> BevFeatureMap {
    let mut bev = BevFeatureMap::zeros(*spec, points.channels());
    splat_into(&mut bev, points).expect("channel counts agree by construction");
    bev
}

/// Lifts all views and splats them in ascending view order. `cams` is indexed
/// by view; `feats[i]` pairs with `depths[i]`.
pub fn lift_splat_multi(
    cams: &[Camera],
    feats: &[ImageFeatureMap],
    depths: &[DepthDistribution],
    bins: &DepthBinSpec,
    spec: &BevGridSpec,
) -> Result<BevFeatureMap> {
    if feats.len() != depths.len() {
        return Err(Error::Shape(format!(
            "{} feature maps but {} depth distributions",
            feats.len(),
            depths.len()
        )));
    }
    let channels = feats.first().map_or(0, |f| f.channels());
    if feats.iter().any(|f| f.channels() != channels) {
        return Err(Error::Shape("feature maps disagree on channel count".into()));
    }
    let mut order: Vec<usize> = (0..feats.len()).collect();
    order.sort_by_key(|&i| feats[i].view);
    let mut bev = BevFeatureMap::zeros(*spec, channels);
    for i in order {
        let cam = cams.get(feats[i].view).ok_or(Error::OutOfRange {
            what: "camera view",
            index: feats[i].view,
            limit: cams.len(),
        })?;
        let cloud = lift(cam, &feats[i], &depths[i], bins)?;
        splat_into(&mut bev, &cloud)?;
    }
    Ok(bev)
}
