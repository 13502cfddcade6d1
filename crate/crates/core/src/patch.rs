//! Patchification: rearranging non-overlapping `p x p` tiles of a matrix into
//! the rows of a `(H_c W_c / p^2) x p^2` matrix, and its exact inverse.
//!
//! Tiles are enumerated in row-major tile order and each tile is vectorized
//! row-major.

use crate::batch::{Mask, MatrixBatch, Metadata};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub h: usize,
    pub w: usize,
    pub p: usize,
}

impl PatchSpec {
    /// Spec with an explicit patch side.
    pub fn with_side(h: usize, w: usize, p: usize) -> Result<Self> {
        if p == 0 || p > h || p > w {
            return Err(Error::InvalidConfig(format!(
                "patch side {p} does not fit {h}x{w}"
            )));
        }
        Ok(PatchSpec { h, w, p })
    }

    pub fn cropped(&self) -> (usize, usize) {
        (self.h / self.p * self.p, self.w / self.p * self.p)
    }

    pub fn n_patches(&self) -> usize {
        let (hc, wc) = self.cropped();
        hc * wc / (self.p * self.p)
    }

    pub fn patch_dim(&self) -> usize {
        self.p * self.p
    }

    pub fn patched_shape(&self) -> (usize, usize) {
        (self.n_patches(), self.patch_dim())
    }

    pub fn to_metadata(&self) -> Metadata {
        vec![
            ("patch.h".into(), self.h.to_string()),
            ("patch.w".into(), self.w.to_string()),
            ("patch.p".into(), self.p.to_string()),
        ]
    }

    /// Reads a spec stored by [`PatchSpec::to_metadata`]; `None` if absent.
    pub fn from_batch(batch: &MatrixBatch) -> Result<Option<Self>> {
        let get = |k: &str| -> Result<Option<usize>> {
            batch
                .meta(k)
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::InvalidData(format!("bad {k} value {v:?}")))
                })
                .transpose()
        };
        match (get("patch.h")?, get("patch.w")?, get("patch.p")?) {
            (Some(h), Some(w), Some(p)) => Ok(Some(PatchSpec::with_side(h, w, p)?)),
            (None, None, None) => Ok(None),
            _ => Err(Error::InvalidData("incomplete patch metadata".into())),
        }
    }
}

/// `p = round((H W)^(1/4))`, rounding half away from zero, clamped to
/// `min(H, W)` so very thin shapes still get a valid tiling.
pub fn plan(h: usize, w: usize) -> Result<PatchSpec> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig(
            "patch planning needs H, W >= 1".into(),
        ));
    }
    let p = ((h as f64) * (w as f64)).sqrt().sqrt().round() as usize;
    PatchSpec::with_side(h, w, p.clamp(1, h.min(w)))
}

/// The top-left `H_c x W_c` block.
pub fn crop(m: &Mat, spec: &PatchSpec) -> Result<Mat> {
    check_source(m.shape(), spec)?;
    let (hc, wc) = spec.cropped();
    Ok(Mat::from_fn(hc, wc, |i, j| m[(i, j)]))
}

fn check_source(shape: (usize, usize), spec: &PatchSpec) -> Result<()> {
    if shape != (spec.h, spec.w) {
        return Err(shape_err(format!(
            "matrix {:?} does not match patch spec {}x{}",
            shape, spec.h, spec.w
        )));
    }
    Ok(())
}

/// Index in the source matrix of entry `c` of patch `r`.
fn source_index(spec: &PatchSpec, r: usize, c: usize) -> (usize, usize) {
    let tiles_per_row = spec.cropped().1 / spec.p;
    let (ti, tj) = (r / tiles_per_row, r % tiles_per_row);
    (ti * spec.p + c / spec.p, tj * spec.p + c % spec.p)
}

pub fn patchify(m: &Mat, spec: &PatchSpec) -> Result<Mat> {
    check_source(m.shape(), spec)?;
    let (rows, cols) = spec.patched_shape();
    Ok(Mat::from_fn(rows, cols, |r, c| m[source_index(spec, r, c)]))
}

pub fn unpatchify(patched: &Mat, spec: &PatchSpec) -> Result<Mat> {
    if patched.shape() != spec.patched_shape() {
        return Err(shape_err(format!(
            "patched matrix {:?}, spec expects {:?}",
            patched.shape(),
            spec.patched_shape()
        )));
    }
    let (hc, wc) = spec.cropped();
    let mut out = Mat::zeros(hc, wc);
    for r in 0..patched.rows() {
        for c in 0..patched.cols() {
            out[source_index(spec, r, c)] = patched[(r, c)];
        }
    }
    Ok(out)
}

fn patchify_mask(k: &Mask, spec: &PatchSpec) -> Mask {
    let (rows, cols) = spec.patched_shape();
    let observed = (0..rows * cols)
        .map(|idx| {
            let (i, j) = source_index(spec, idx / cols, idx % cols);
            k.is_observed(i, j)
        })
        .collect();
    Mask::from_vec(rows, cols, observed).expect("shape")
}

fn unpatchify_mask(k: &Mask, spec: &PatchSpec) -> Mask {
    let (hc, wc) = spec.cropped();
    let mut observed = vec![false; hc * wc];
    let cols = spec.patch_dim();
    for idx in 0..spec.n_patches() * cols {
        let (i, j) = source_index(spec, idx / cols, idx % cols);
        observed[i * wc + j] = k.is_observed(idx / cols, idx % cols);
    }
    Mask::from_vec(hc, wc, observed).expect("shape")
}

fn with_patch_meta(mut meta: Metadata, spec: Option<&PatchSpec>) -> Option<Metadata> {
    meta.retain(|(k, _)| !k.starts_with("patch."));
    if let Some(s) = spec {
        meta.extend(s.to_metadata());
    }
    (!meta.is_empty()).then_some(meta)
}

/// Patchifies every matrix (and mask) and records the patch spec in the metadata.
pub fn patchify_batch(batch: &MatrixBatch, spec: &PatchSpec) -> Result<MatrixBatch> {
    let mats = batch
        .matrices()
        .iter()
        .map(|m| patchify(m, spec))
        .collect::<Result<Vec<_>>>()?;
    let (rows, cols) = spec.patched_shape();
    let mut out = MatrixBatch::new(rows, cols, mats)?;
    if let Some(ms) = batch.masks() {
        out = out.with_masks(ms.iter().map(|k| patchify_mask(k, spec)).collect())?;
    }
    out.metadata = with_patch_meta(batch.metadata.clone().unwrap_or_default(), Some(spec));
    Ok(out)
}

/// Inverts [`patchify_batch`] using the patch spec stored in the batch metadata.
pub fn unpatchify_batch(batch: &MatrixBatch) -> Result<MatrixBatch> {
    let spec = PatchSpec::from_batch(batch)?
        .ok_or_else(|| Error::InvalidData("batch carries no patch spec".into()))?;
    let mats = batch
        .matrices()
        .iter()
        .map(|m| unpatchify(m, &spec))
        .collect::<Result<Vec<_>>>()?;
    let (hc, wc) = spec.cropped();
    let mut out = MatrixBatch::new(hc, wc, mats)?;
    if let Some(ms) = batch.masks() {
        out = out.with_masks(ms.iter().map(|k| unpatchify_mask(k, &spec)).collect())?;
    }
    out.metadata = with_patch_meta(batch.metadata.clone().unwrap_or_default(), None);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::rng::rng_stream;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng_stream(seed, 0);
        Mat::from_fn(rows, cols, |_, _| r.normal())
    }

    #[test]
    fn planning_examples() {
        let s = plan(200, 200).unwrap();
        assert_eq!(
            (s.p, s.cropped(), s.patched_shape()),
            (14, (196, 196), (196, 196))
        );
        let s = plan(1, 1).unwrap();
        assert_eq!((s.p, s.patched_shape()), (1, (1, 1)));
        let s = plan(64, 64).unwrap();
        assert_eq!(
            (s.p, s.cropped(), s.patched_shape()),
            (8, (64, 64), (64, 64))
        );
        assert!(plan(0, 3).is_err());
        // round(6^(1/4)) = 2 would not fit a single row.
        assert_eq!(plan(1, 6).unwrap().p, 1);
        assert_eq!(plan(2, 64).unwrap().p, 2);
    }

    #[test]
    fn tile_order_is_row_major() {
        let m = Mat::from_fn(4, 4, |i, j| (10 * i + j) as f64);
        let p = patchify(&m, &PatchSpec::with_side(4, 4, 2).unwrap()).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 12.0, 13.0]);
        assert_eq!(p.row(2), &[20.0, 21.0, 30.0, 31.0]);
    }

    #[test]
    fn round_trips() {
        let m = random_mat(6, 6, 2);
        let spec = PatchSpec::with_side(6, 6, 3).unwrap();
        assert_eq!(unpatchify(&patchify(&m, &spec).unwrap(), &spec).unwrap(), m);
        let m = random_mat(7, 9, 3);
        let spec = plan(7, 9).unwrap();
        let back = unpatchify(&patchify(&m, &spec).unwrap(), &spec).unwrap();
        assert_eq!(back, crop(&m, &spec).unwrap());
        let spec = PatchSpec::with_side(4, 4, 2).unwrap();
        assert_eq!(
            unpatchify(&Mat::zeros(4, 4), &spec).unwrap(),
            Mat::zeros(4, 4)
        );
    }

    #[test]
    fn constant_and_tiled_textures_patch_to_rank_one() {
        let spec = PatchSpec::with_side(12, 12, 3).unwrap();
        let c = Mat::from_fn(12, 12, |_, _| 2.5);
        let pc = patchify(&c, &spec).unwrap();
        assert!((1..pc.rows()).all(|r| pc.row(r) == pc.row(0)));
        let tile = random_mat(3, 3, 4);
        let m = Mat::from_fn(12, 12, |i, j| tile[(i % 3, j % 3)]);
        let sv = singular_values(&patchify(&m, &spec).unwrap()).unwrap();
        assert!(sv[1] <= 1e-10 * sv[0]);
        let orig = singular_values(&m).unwrap();
        assert!(orig[1] > 1e-3 * orig[0]);
    }

    #[test]
    fn batch_round_trip_keeps_masks_and_metadata() {
        let mats = vec![random_mat(5, 7, 1), random_mat(5, 7, 2)];
        let mut r = rng_stream(8, 8);
        let masks: Vec<Mask> = (0..2)
            .map(|_| Mask::from_vec(5, 7, (0..35).map(|_| r.bernoulli(0.5)).collect()).unwrap())
            .collect();
        let mut batch = MatrixBatch::from_matrices(mats)
            .unwrap()
            .with_masks(masks)
            .unwrap();
        batch.metadata = Some(vec![("case".into(), "blobs".into())]);
        let spec = plan(5, 7).unwrap();
        let patched = patchify_batch(&batch, &spec).unwrap();
        assert_eq!(PatchSpec::from_batch(&patched).unwrap(), Some(spec));
        let back = unpatchify_batch(&patched).unwrap();
        let (hc, wc) = spec.cropped();
        for i in 0..2 {
            assert_eq!(
                back.matrices()[i],
                crop(&batch.matrices()[i], &spec).unwrap()
            );
            for a in 0..hc {
                for b in 0..wc {
                    assert_eq!(
                        back.masks().unwrap()[i].is_observed(a, b),
                        batch.masks().unwrap()[i].is_observed(a, b)
                    );
                }
            }
        }
        assert_eq!(back.metadata, Some(vec![("case".into(), "blobs".into())]));
    }
}
