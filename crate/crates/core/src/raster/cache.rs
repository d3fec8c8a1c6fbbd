//! On-disk raster cache: one NPZ per (scene, target).
//!
//! Members: `raster` (u8 `[C, H, W]`), `gt_future` (f32 `[T_f, 2]`, local
//! frame, omitted for scenes without ground truth), `future_valid` (u8
//! `[T_f]`), `frame` (f64 `[6]`: rotation, tx, ty, scale, anchor_u, anchor_v)
//! and `meta` (u8 bytes of a UTF-8 JSON object).

use std::path::Path;

use super::{Raster, RasterConfig, RasterMeta};
use crate::error::{Error, Result};
use crate::npy::{self, DType, NpyArray};
use crate::scene::{Track, FUTURE_LEN};
use crate::transform::FrameTransform;

/// Ground-truth future expressed in the target's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFuture {
    pub points: Vec<[f32; 2]>,
    pub valid: Vec<bool>,
}

/// Transforms a track's world-frame future into the given local frame.
/// Returns `None` when the track carries no future.
pub fn local_future(track: &Track, frame: &FrameTransform) -> Option<LocalFuture> {
    let future = track.future.as_ref()?;
    let mut points = Vec::with_capacity(future.len());
    let mut valid = Vec::with_capacity(future.len());
    for s in future {
        if s.valid {
            let q = frame.world_to_local(s.position);
            points.push([q.x as f32, q.y as f32]);
        } else {
            points.push([0.0, 0.0]);
        }
        valid.push(s.valid);
    }
    Some(LocalFuture { points, valid })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub raster: Raster,
    /// Local-frame future; `None` for scenes without ground truth.
    pub gt_future: Option<Vec<[f32; 2]>>,
    pub future_valid: Vec<bool>,
}

pub fn encode_cache(raster: &Raster, gt_future: Option<&LocalFuture>) -> Result<Vec<u8>> {
    let raster_arr = NpyArray::from_u8(vec![raster.channels, raster.height, raster.width], raster.data.clone());
    let future_len = gt_future.map_or(FUTURE_LEN, |f| f.points.len());
    let valid: Vec<u8> = match gt_future {
        Some(f) => f.valid.iter().map(|&b| b as u8).collect(),
        None => vec![0; future_len],
    };
    let valid_arr = NpyArray::from_u8(vec![future_len], valid);
    let frame_arr = NpyArray::from_f64(vec![6], &raster.frame.to_array());
    let meta_json = serde_json::to_vec(&raster.meta).expect("meta serializes");
    let meta_arr = NpyArray::from_u8(vec![meta_json.len()], meta_json);

    let gt_arr = gt_future.map(|f| {
        let flat: Vec<f32> = f.points.iter().flatten().copied().collect();
        NpyArray::from_f32(vec![f.points.len(), 2], &flat)
    });
    let mut entries: Vec<(&str, &NpyArray)> = vec![("raster", &raster_arr)];
    if let Some(gt) = &gt_arr {
        entries.push(("gt_future", gt));
    }
    entries.extend([("future_valid", &valid_arr), ("frame", &frame_arr), ("meta", &meta_arr)]);
    npy::encode_npz(&entries)
}

pub fn write_cache(raster: &Raster, gt_future: Option<&LocalFuture>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cache(raster, gt_future)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cache written with the default raster geometry (25×224×224).
pub fn read_cache(path: impl AsRef<Path>) -> Result<CacheEntry> {
    read_cache_expecting(path, &RasterConfig::default())
}

pub fn read_cache_expecting(path: impl AsRef<Path>, expected: &RasterConfig) -> Result<CacheEntry> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes, expected).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_cache(bytes: &[u8], expected: &RasterConfig) -> Result<CacheEntry> {
    let mut members = npy::decode_npz(bytes)?;
    let mut take = |name: &str| {
        members
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing `{name}` member")))
    };

    let raster_arr = take("raster")?;
    let (c, h, w) = match (raster_arr.dtype, raster_arr.shape.as_slice()) {
        (DType::U8, &[c, h, w]) => (c, h, w),
        (dtype, shape) => {
            return Err(Error::Format(format!(
                "raster must be u8 [C, H, W], got {dtype:?} {shape:?}"
            )))
        }
    };
    if c != expected.channels() {
        return Err(Error::Format(format!(
            "raster has {c} channels, expected {}",
            expected.channels()
        )));
    }
    if (h, w) != (expected.height, expected.width) {
        return Err(Error::Format(format!(
            "raster is {h}×{w}, expected {}×{}",
            expected.height, expected.width
        )));
    }

    let frame = take("frame")?
        .to_f64()
        .filter(|v| v.len() == 6)
        .ok_or_else(|| Error::Corruption("frame must be f64 [6]".into()))?;
    let frame = FrameTransform::from_array(frame.try_into().unwrap());

    let valid_arr = take("future_valid")?;
    if valid_arr.dtype != DType::U8 || valid_arr.shape.len() != 1 {
        return Err(Error::Corruption("future_valid must be u8 [T_f]".into()));
    }
    let future_valid: Vec<bool> = valid_arr.data.iter().map(|&b| b != 0).collect();

    let gt_future = match take("gt_future") {
        Ok(arr) => {
            let values = arr
                .to_f32()
                .filter(|_| arr.shape == [future_valid.len(), 2])
                .ok_or_else(|| Error::Corruption(format!("gt_future must be f32 [{}, 2]", future_valid.len())))?;
            Some(values.chunks_exact(2).map(|p| [p[0], p[1]]).collect())
        }
        Err(_) => None,
    };

    let meta_arr = take("meta")?;
    let meta: RasterMeta =
        serde_json::from_slice(&meta_arr.data).map_err(|e| Error::Corruption(format!("meta JSON: {e}")))?;

    Ok(CacheEntry {
        raster: Raster {
            channels: c,
            height: h,
            width: w,
            data: raster_arr.data,
            frame,
            meta,
        },
        gt_future,
        future_valid,
    })
}
