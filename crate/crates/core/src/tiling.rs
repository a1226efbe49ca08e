//! Cutting scenes into non-overlapping square patches, resizing patches and
//! stitching per-patch masks back into scene-sized masks.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster_io::{Raster, SpectralScene};
use crate::scalar::Scalar;

/// Side of the patches cut from full scenes.
pub const PATCH_SIZE: usize = 384;
/// Side of the patches fed to the network.
pub const MODEL_INPUT_SIDE: usize = 192;
/// Number of spectral channels per patch.
pub const CHANNELS: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TilingError {
    #[error("bilinear resampling is not allowed on binary masks")]
    InvalidMethod,
    #[error("no patch supplied for grid cell ({row}, {col})")]
    MissingPatch { row: usize, col: usize },
    #[error("grid cell ({row}, {col}) supplied more than once")]
    DuplicatePatch { row: usize, col: usize },
    #[error("grid cell ({row}, {col}) lies outside a {rows}x{cols} grid")]
    OutOfGrid {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("patch side {found} does not match expected {expected}")]
    SideMismatch { expected: usize, found: usize },
    #[error("sizes must be positive")]
    ZeroSize,
    #[error("mask values do not respect kind {0:?}")]
    KindViolation(MaskKind),
}

pub type Result<T> = std::result::Result<T, TilingError>;

/// Grid layout of a scene cut into `patch_size` squares, zero-padded at the
/// bottom and right edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub scene_id: String,
    pub scene_h: usize,
    pub scene_w: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl PatchGrid {
    pub fn new(scene_id: &str, scene_h: usize, scene_w: usize, patch_size: usize) -> Self {
        assert!(patch_size > 0, "patch size must be positive");
        let rows = scene_h.div_ceil(patch_size);
        let cols = scene_w.div_ceil(patch_size);
        Self {
            scene_id: scene_id.to_string(),
            scene_h,
            scene_w,
            patch_size,
            rows,
            cols,
            pad_bottom: rows * patch_size - scene_h,
            pad_right: cols * patch_size - scene_w,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// File stem used for emitted patches: `patch_<row>_<col>_<scene_id>`.
    pub fn patch_name(&self, row: usize, col: usize) -> String {
        format!("patch_{row}_{col}_{}", self.scene_id)
    }
}

/// Parses `patch_<row>_<col>_<scene_id>` back into its parts.
pub fn parse_patch_name(name: &str) -> Option<(usize, usize, &str)> {
    let rest = name.strip_prefix("patch_")?;
    let (row, rest) = rest.split_once('_')?;
    let (col, scene) = rest.split_once('_')?;
    if scene.is_empty() {
        return None;
    }
    Some((row.parse().ok()?, col.parse().ok()?, scene))
}

/// Four-channel square patch stored channel-major (`[channel][row][col]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPatch<T> {
    pub grid_row: usize,
    pub grid_col: usize,
    pub side: usize,
    pub pixels: Vec<T>,
}

impl<T: Copy> SpectralPatch<T> {
    pub fn new(grid_row: usize, grid_col: usize, side: usize, pixels: Vec<T>) -> Self {
        assert_eq!(pixels.len(), CHANNELS * side * side, "patch pixel count");
        Self {
            grid_row,
            grid_col,
            side,
            pixels,
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.side * self.side;
        &self.pixels[c * n..(c + 1) * n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Values in `[0, 1]`.
    Probability,
    /// Values in `{0, 1}`.
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPatch<V> {
    pub grid_row: usize,
    pub grid_col: usize,
    pub side: usize,
    pub values: Vec<V>,
    pub kind: MaskKind,
}

impl<V: Copy + Zero + One + PartialOrd> MaskPatch<V> {
    pub fn new(
        grid_row: usize,
        grid_col: usize,
        side: usize,
        values: Vec<V>,
        kind: MaskKind,
    ) -> Result<Self> {
        if values.len() != side * side {
            return Err(TilingError::SideMismatch {
                expected: side * side,
                found: values.len(),
            });
        }
        let ok = match kind {
            MaskKind::Binary => values.iter().all(|v| v.is_zero() || v.is_one()),
            MaskKind::Probability => values.iter().all(|v| *v >= V::zero() && *v <= V::one()),
        };
        if !ok {
            return Err(TilingError::KindViolation(kind));
        }
        Ok(Self {
            grid_row,
            grid_col,
            side,
            values,
            kind,
        })
    }
}

fn cut_plane<P: Copy + Zero>(src: &Raster<P>, grid: &PatchGrid, row: usize, col: usize, out: &mut Vec<P>) {
    let s = grid.patch_size;
    for r in 0..s {
        let sr = row * s + r;
        for c in 0..s {
            let sc = col * s + c;
            out.push(if sr < src.height() && sc < src.width() {
                src.get(sr, sc)
            } else {
                P::zero()
            });
        }
    }
}

/// Cuts a scene into `rows * cols` zero-padded patches in row-major grid order.
pub fn cut_patches(scene: &SpectralScene, patch_size: usize) -> (PatchGrid, Vec<SpectralPatch<u16>>) {
    let grid = PatchGrid::new(scene.scene_id(), scene.height(), scene.width(), patch_size);
    let mut patches = Vec::with_capacity(grid.cell_count());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let mut pixels = Vec::with_capacity(CHANNELS * patch_size * patch_size);
            for band in scene.bands() {
                cut_plane(band, &grid, row, col, &mut pixels);
            }
            patches.push(SpectralPatch::new(row, col, patch_size, pixels));
        }
    }
    (grid, patches)
}

/// Cuts a binary mask with the same grid rule as [`cut_patches`].
pub fn cut_mask(
    scene_id: &str,
    mask: &Raster<u8>,
    patch_size: usize,
) -> Result<(PatchGrid, Vec<MaskPatch<u8>>)> {
    let grid = PatchGrid::new(scene_id, mask.height(), mask.width(), patch_size);
    let mut patches = Vec::with_capacity(grid.cell_count());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let mut values = Vec::with_capacity(patch_size * patch_size);
            cut_plane(mask, &grid, row, col, &mut values);
            patches.push(MaskPatch::new(row, col, patch_size, values, MaskKind::Binary)?);
        }
    }
    Ok((grid, patches))
}

/// Divides every 16-bit value by 65535.
pub fn normalize<T: Scalar>(patch: &SpectralPatch<u16>) -> SpectralPatch<T> {
    let scale = T::lit(f64::from(u16::MAX));
    SpectralPatch {
        grid_row: patch.grid_row,
        grid_col: patch.grid_col,
        side: patch.side,
        pixels: patch
            .pixels
            .iter()
            .map(|&v| T::lit(f64::from(v)) / scale)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMethod {
    Bilinear,
    Nearest,
}

#[inline]
fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    // Pixel-centre alignment: floor((i + 0.5) * src / dst).
    ((2 * i + 1) * src / (2 * dst)).min(src - 1)
}

pub fn resize_plane_nearest<V: Copy>(src: &[V], src_side: usize, dst_side: usize) -> Vec<V> {
    debug_assert_eq!(src.len(), src_side * src_side);
    let idx: Vec<usize> = (0..dst_side)
        .map(|i| nearest_index(i, src_side, dst_side))
        .collect();
    let mut out = Vec::with_capacity(dst_side * dst_side);
    for &r in &idx {
        let row = &src[r * src_side..(r + 1) * src_side];
        out.extend(idx.iter().map(|&c| row[c]));
    }
    out
}

/// Samples `plane` (row-major, `h x w`) at a fractional position with edge
/// clamping. The result never leaves the range spanned by the four
/// neighbours, so constant planes stay exactly constant.
#[inline]
pub(crate) fn bilinear_sample<T: Scalar>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let max_y = T::lit((h - 1) as f64);
    let max_x = T::lit((w - 1) as f64);
    let y = y.max(T::zero()).min(max_y);
    let x = x.max(T::zero()).min(max_x);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let y0 = y0.to_usize().unwrap_or(0).min(h - 1);
    let x0 = x0.to_usize().unwrap_or(0).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let p00 = plane[y0 * w + x0];
    let p01 = plane[y0 * w + x1];
    let p10 = plane[y1 * w + x0];
    let p11 = plane[y1 * w + x1];
    let top = p00 + (p01 - p00) * fx;
    let bottom = p10 + (p11 - p10) * fx;
    let v = top + (bottom - top) * fy;
    let lo = p00.min(p01).min(p10).min(p11);
    let hi = p00.max(p01).max(p10).max(p11);
    v.max(lo).min(hi)
}

pub fn resize_plane_bilinear<T: Scalar>(src: &[T], src_side: usize, dst_side: usize) -> Vec<T> {
    debug_assert_eq!(src.len(), src_side * src_side);
    if src_side == dst_side {
        return src.to_vec();
    }
    let scale = T::lit(src_side as f64 / dst_side as f64);
    let half = T::lit(0.5);
    let coords: Vec<T> = (0..dst_side)
        .map(|i| (T::lit(i as f64) + half) * scale - half)
        .collect();
    let mut out = Vec::with_capacity(dst_side * dst_side);
    for &y in &coords {
        for &x in &coords {
            out.push(bilinear_sample(src, src_side, src_side, y, x));
        }
    }
    out
}

fn resize_plane<T: Scalar>(src: &[T], src_side: usize, dst_side: usize, method: ResizeMethod) -> Vec<T> {
    match method {
        ResizeMethod::Bilinear => resize_plane_bilinear(src, src_side, dst_side),
        ResizeMethod::Nearest => resize_plane_nearest(src, src_side, dst_side),
    }
}

/// Resizes every channel of a spectral patch to `target` pixels per side.
pub fn resize_patch<T: Scalar>(
    patch: &SpectralPatch<T>,
    target: usize,
    method: ResizeMethod,
) -> Result<SpectralPatch<T>> {
    if target == 0 || patch.side == 0 {
        return Err(TilingError::ZeroSize);
    }
    let mut pixels = Vec::with_capacity(CHANNELS * target * target);
    for c in 0..CHANNELS {
        pixels.extend(resize_plane(patch.channel(c), patch.side, target, method));
    }
    Ok(SpectralPatch::new(patch.grid_row, patch.grid_col, target, pixels))
}

/// Resizes a mask patch; binary masks accept only nearest-neighbour.
pub fn resize_mask<V>(patch: &MaskPatch<V>, target: usize, method: ResizeMethod) -> Result<MaskPatch<V>>
where
    V: Copy,
{
    if target == 0 || patch.side == 0 {
        return Err(TilingError::ZeroSize);
    }
    match method {
        ResizeMethod::Nearest => Ok(MaskPatch {
            grid_row: patch.grid_row,
            grid_col: patch.grid_col,
            side: target,
            values: resize_plane_nearest(&patch.values, patch.side, target),
            kind: patch.kind,
        }),
        ResizeMethod::Bilinear => Err(TilingError::InvalidMethod),
    }
}

/// Bilinear resize for probability masks.
pub fn resize_probability<T: Scalar>(patch: &MaskPatch<T>, target: usize, method: ResizeMethod) -> Result<MaskPatch<T>> {
    if patch.kind == MaskKind::Binary && method == ResizeMethod::Bilinear {
        return Err(TilingError::InvalidMethod);
    }
    if target == 0 || patch.side == 0 {
        return Err(TilingError::ZeroSize);
    }
    Ok(MaskPatch {
        grid_row: patch.grid_row,
        grid_col: patch.grid_col,
        side: target,
        values: resize_plane(&patch.values, patch.side, target, method),
        kind: patch.kind,
    })
}

/// Reassembles per-cell masks into a scene-sized raster, cropping padding.
pub fn stitch<V: Copy + Zero>(grid: &PatchGrid, patches: &[MaskPatch<V>]) -> Result<Raster<V>> {
    let mut slots: Vec<Option<&MaskPatch<V>>> = vec![None; grid.cell_count()];
    for p in patches {
        if p.grid_row >= grid.rows || p.grid_col >= grid.cols {
            return Err(TilingError::OutOfGrid {
                row: p.grid_row,
                col: p.grid_col,
                rows: grid.rows,
                cols: grid.cols,
            });
        }
        if p.side != grid.patch_size {
            return Err(TilingError::SideMismatch {
                expected: grid.patch_size,
                found: p.side,
            });
        }
        let slot = &mut slots[p.grid_row * grid.cols + p.grid_col];
        if slot.is_some() {
            return Err(TilingError::DuplicatePatch {
                row: p.grid_row,
                col: p.grid_col,
            });
        }
        *slot = Some(p);
    }
    if grid.scene_h == 0 || grid.scene_w == 0 {
        return Err(TilingError::ZeroSize);
    }
    let s = grid.patch_size;
    let mut out = vec![V::zero(); grid.scene_h * grid.scene_w];
    for (i, slot) in slots.iter().enumerate() {
        let (row, col) = (i / grid.cols, i % grid.cols);
        let p = slot.ok_or(TilingError::MissingPatch { row, col })?;
        let r_end = ((row + 1) * s).min(grid.scene_h);
        let c_end = ((col + 1) * s).min(grid.scene_w);
        let width = c_end - col * s;
        for sr in row * s..r_end {
            let pr = sr - row * s;
            let dst = sr * grid.scene_w + col * s;
            out[dst..dst + width].copy_from_slice(&p.values[pr * s..pr * s + width]);
        }
    }
    Ok(Raster::new(grid.scene_h, grid.scene_w, out).expect("grid dimensions are positive"))
}
