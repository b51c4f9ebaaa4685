//! Run-length mask tubes, volumetric IoU, and the soft segmentation losses
//! (IoU, Dice, Focal) with their analytic gradients.
//!
//! RLE layout: one run array per frame, row-major, alternating
//! background/foreground counts and always starting with a (possibly zero)
//! background run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("dimensions must be positive, got {frames}x{height}x{width}")]
    EmptyDims { frames: usize, height: usize, width: usize },
    #[error("volume has {found} voxels, expected {expected}")]
    VolumeSize { expected: usize, found: usize },
    #[error("corrupt rle in frame {frame}: runs sum to {sum}, expected {expected}")]
    CorruptRle { frame: usize, sum: u64, expected: u64 },
    #[error("rle has {found} frames, expected {expected}")]
    FrameCount { expected: usize, found: usize },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("probability {value} at voxel {index} is outside [0, 1]")]
    Probability { index: usize, value: f64 },
}

/// Binary `T x H x W` volume tracking one object, stored run-length encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTube {
    width: usize,
    height: usize,
    runs: Vec<Vec<u32>>,
}

fn check_dims(frames: usize, height: usize, width: usize) -> Result<(), MaskError> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(MaskError::EmptyDims { frames, height, width });
    }
    Ok(())
}

fn encode_plane(plane: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u32;
    for &v in plane {
        if v != current {
            runs.push(count);
            current = v;
            count = 0;
        }
        count += 1;
    }
    runs.push(count);
    runs
}

impl MaskTube {
    /// Encodes a dense row-major `frames x height x width` volume.
    pub fn from_dense(frames: usize, height: usize, width: usize, voxels: &[bool]) -> Result<Self, MaskError> {
        check_dims(frames, height, width)?;
        let plane = height * width;
        if voxels.len() != frames * plane {
            return Err(MaskError::VolumeSize { expected: frames * plane, found: voxels.len() });
        }
        let runs = voxels.chunks(plane).map(encode_plane).collect();
        Ok(Self { width, height, runs })
    }

    /// Wraps raw per-frame runs after checking each frame sums to `H x W`.
    pub fn from_runs(height: usize, width: usize, runs: Vec<Vec<u32>>) -> Result<Self, MaskError> {
        check_dims(runs.len(), height, width)?;
        let tube = Self { width, height, runs };
        tube.check()?;
        Ok(tube)
    }

    pub fn empty(frames: usize, height: usize, width: usize) -> Result<Self, MaskError> {
        check_dims(frames, height, width)?;
        let plane = (height * width) as u32;
        Ok(Self { width, height, runs: vec![vec![plane]; frames] })
    }

    pub fn check(&self) -> Result<(), MaskError> {
        let expected = (self.width * self.height) as u64;
        for (frame, r) in self.runs.iter().enumerate() {
            let sum: u64 = r.iter().map(|&x| x as u64).sum();
            if sum != expected || r.is_empty() {
                return Err(MaskError::CorruptRle { frame, sum, expected });
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.runs.len()
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames(), self.height, self.width)
    }
    pub fn runs(&self) -> &[Vec<u32>] {
        &self.runs
    }
    pub fn voxel_count(&self) -> usize {
        self.frames() * self.width * self.height
    }

    pub fn to_dense(&self) -> Result<Vec<bool>, MaskError> {
        self.check()?;
        let mut out = Vec::with_capacity(self.voxel_count());
        for r in &self.runs {
            for (i, &n) in r.iter().enumerate() {
                out.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
            }
        }
        Ok(out)
    }

    /// Number of foreground voxels.
    pub fn area(&self) -> u64 {
        self.runs.iter().flat_map(|r| r.iter().skip(1).step_by(2)).map(|&n| n as u64).sum()
    }

    /// Foreground intervals `[start, end)` of one frame in plane coordinates.
    fn intervals(runs: &[u32]) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        runs.iter().enumerate().filter_map(move |(i, &n)| {
            let start = pos;
            pos += n as u64;
            (i % 2 == 1 && n > 0).then_some((start, pos))
        })
    }

    /// Foreground voxels shared with `other`, computed run-wise.
    pub fn intersection(&self, other: &MaskTube) -> Result<u64, MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimMismatch(self.dims(), other.dims()));
        }
        let mut total = 0;
        for (a, b) in self.runs.iter().zip(&other.runs) {
            let xs: Vec<_> = Self::intervals(a).collect();
            let ys: Vec<_> = Self::intervals(b).collect();
            let (mut i, mut j) = (0, 0);
            while i < xs.len() && j < ys.len() {
                let lo = xs[i].0.max(ys[j].0);
                let hi = xs[i].1.min(ys[j].1);
                if hi > lo {
                    total += hi - lo;
                }
                if xs[i].1 < ys[j].1 {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }
        Ok(total)
    }
}

/// Volumetric IoU over all `T x H x W` voxels; 0 when both tubes are empty.
pub fn tube_iou(a: &MaskTube, b: &MaskTube) -> Result<f64, MaskError> {
    let inter = a.intersection(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Dense per-voxel foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskTube {
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SoftMaskTube {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, MaskError> {
        check_dims(frames, height, width)?;
        let expected = frames * height * width;
        if values.len() != expected {
            return Err(MaskError::VolumeSize { expected, found: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(MaskError::Probability { index, value });
        }
        Ok(Self { frames, height, width, values })
    }

    /// Hard 0/1 probabilities from a binary tube.
    pub fn from_tube(tube: &MaskTube) -> Result<Self, MaskError> {
        let dense = tube.to_dense()?;
        let (f, h, w) = tube.dims();
        Self::new(f, h, w, dense.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

pub const DICE_SMOOTH: f64 = 1.0;
pub const FOCAL_CLIP: f64 = 1e-7;

/// A loss value and its gradient with respect to each predicted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn gold_values(pred: &SoftMaskTube, gold: &MaskTube) -> Result<Vec<f64>, MaskError> {
    if pred.dims() != gold.dims() {
        return Err(MaskError::DimMismatch(pred.dims(), gold.dims()));
    }
    Ok(gold.to_dense()?.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
}

/// Soft IoU loss on raw probability slices, `1 - sum(pg) / sum(p + g - pg)`.
pub fn iou_loss_grad_raw(p: &[f64], g: &[f64]) -> LossGrad {
    let inter: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
    let union: f64 = p.iter().zip(g).map(|(p, g)| p + g - p * g).sum();
    if union <= 0.0 {
        return LossGrad { value: 0.0, grad: vec![0.0; p.len()] };
    }
    let grad = g.iter().map(|g| -(g * union - inter * (1.0 - g)) / (union * union)).collect();
    LossGrad { value: 1.0 - inter / union, grad }
}

/// Dice loss on raw slices, `1 - 2 sum(pg) / (sum p + sum g + eps)`.
/// Two empty volumes agree perfectly and score 0.
pub fn dice_loss_grad_raw(p: &[f64], g: &[f64], smooth: f64) -> LossGrad {
    let inter: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
    let mass = p.iter().sum::<f64>() + g.iter().sum::<f64>();
    if mass <= 0.0 {
        return LossGrad { value: 0.0, grad: vec![0.0; p.len()] };
    }
    let denom = mass + smooth;
    let grad = g.iter().map(|g| -(2.0 * g * denom - 2.0 * inter) / (denom * denom)).collect();
    LossGrad { value: 1.0 - 2.0 * inter / denom, grad }
}

/// Mean focal loss on raw slices with `p` clipped to `[1e-7, 1 - 1e-7]`.
/// The gradient is zero on the clipped region.
pub fn focal_loss_grad_raw(p: &[f64], g: &[f64], params: FocalParams) -> LossGrad {
    let n = p.len().max(1) as f64;
    let FocalParams { alpha, gamma } = params;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&raw, &g) in p.iter().zip(g) {
        let clipped = !(FOCAL_CLIP..=1.0 - FOCAL_CLIP).contains(&raw);
        let p = raw.clamp(FOCAL_CLIP, 1.0 - FOCAL_CLIP);
        let positive = g >= 0.5;
        let (pt, dpt, at) = if positive { (p, 1.0, alpha) } else { (1.0 - p, -1.0, 1.0 - alpha) };
        let one_minus = 1.0 - pt;
        let focus = one_minus.powf(gamma);
        value += -at * focus * pt.ln();
        let d_focus = if gamma == 0.0 { 0.0 } else { -gamma * one_minus.powf(gamma - 1.0) };
        let dl_dpt = -at * (d_focus * pt.ln() + focus / pt);
        grad.push(if clipped { 0.0 } else { dl_dpt * dpt / n });
    }
    LossGrad { value: value / n, grad }
}

pub fn iou_loss(pred: &SoftMaskTube, gold: &MaskTube) -> Result<LossGrad, MaskError> {
    let g = gold_values(pred, gold)?;
    Ok(iou_loss_grad_raw(&pred.values, &g))
}

pub fn dice_loss(pred: &SoftMaskTube, gold: &MaskTube, smooth: f64) -> Result<LossGrad, MaskError> {
    let g = gold_values(pred, gold)?;
    Ok(dice_loss_grad_raw(&pred.values, &g, smooth))
}

pub fn focal_loss(pred: &SoftMaskTube, gold: &MaskTube, params: FocalParams) -> Result<LossGrad, MaskError> {
    let g = gold_values(pred, gold)?;
    Ok(focal_loss_grad_raw(&pred.values, &g, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn tube(f: usize, h: usize, w: usize, on: &[(usize, usize, usize)]) -> MaskTube {
        let mut v = vec![false; f * h * w];
        for &(t, y, x) in on {
            v[(t * h + y) * w + x] = true;
        }
        MaskTube::from_dense(f, h, w, &v).unwrap()
    }

    #[test]
    fn rle_trivial_volumes() {
        let zero = MaskTube::from_dense(2, 2, 2, &[false; 8]).unwrap();
        assert_eq!(zero.runs(), &[vec![4], vec![4]]);
        let one = MaskTube::from_dense(2, 2, 2, &[true; 8]).unwrap();
        assert_eq!(one.runs(), &[vec![0, 4], vec![0, 4]]);
    }

    #[test]
    fn rle_round_trip_seeded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v: Vec<bool> = (0..8 * 8 * 4).map(|_| rng.gen_bool(0.4)).collect();
            let t = MaskTube::from_dense(4, 8, 8, &v).unwrap();
            assert_eq!(t.to_dense().unwrap(), v);
        }
    }

    #[test]
    fn corrupt_rle_rejected() {
        let err = MaskTube::from_runs(2, 2, vec![vec![1, 2]]).unwrap_err();
        assert!(matches!(err, MaskError::CorruptRle { frame: 0, sum: 3, expected: 4 }));
    }

    #[test]
    fn iou_examples() {
        // (frame, row, col) = (0,0,0), (0,0,1) vs (0,0,1), (1,0,1)
        let a = tube(2, 2, 2, &[(0, 0, 0), (0, 0, 1)]);
        let b = tube(2, 2, 2, &[(0, 0, 1), (1, 0, 1)]);
        assert_eq!(tube_iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(tube_iou(&a, &a).unwrap(), 1.0);
        let c = tube(2, 2, 2, &[(1, 1, 1)]);
        assert_eq!(tube_iou(&a, &c).unwrap(), 0.0);
        let e = MaskTube::empty(2, 2, 2).unwrap();
        assert_eq!(tube_iou(&e, &e).unwrap(), 0.0);
        assert!(tube_iou(&a, &MaskTube::empty(1, 2, 2).unwrap()).is_err());
    }

    #[test]
    fn iou_loss_examples() {
        let g = tube(1, 2, 2, &[(0, 0, 0), (0, 0, 1)]);
        let hard = SoftMaskTube::from_tube(&g).unwrap();
        assert_eq!(iou_loss(&hard, &g).unwrap().value, 0.0);
        let inv = SoftMaskTube::new(1, 2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(iou_loss(&inv, &g).unwrap().value, 1.0);
        // uniform 0.5: inter = 1.0, union = 0.5*4 + 2 - 1.0 = 3.0
        let half = SoftMaskTube::new(1, 2, 2, vec![0.5; 4]).unwrap();
        assert!((iou_loss(&half, &g).unwrap().value - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn dice_examples() {
        let a = tube(2, 2, 2, &[(0, 0, 0), (0, 0, 1)]);
        let b = tube(2, 2, 2, &[(0, 0, 1), (1, 0, 1)]);
        let pa = SoftMaskTube::from_tube(&a).unwrap();
        assert!((dice_loss(&pa, &b, DICE_SMOOTH).unwrap().value - 0.6).abs() < 1e-15);
        let e = MaskTube::empty(2, 2, 2).unwrap();
        let pe = SoftMaskTube::from_tube(&e).unwrap();
        assert_eq!(dice_loss(&pe, &e, DICE_SMOOTH).unwrap().value, 0.0);
        let big = MaskTube::from_dense(4, 16, 16, &[true; 1024]).unwrap();
        let pb = SoftMaskTube::from_tube(&big).unwrap();
        assert!(dice_loss(&pb, &big, DICE_SMOOTH).unwrap().value < 1e-3);
    }

    #[test]
    fn focal_examples() {
        let g = tube(1, 1, 1, &[(0, 0, 0)]);
        let p = SoftMaskTube::new(1, 1, 1, vec![0.5]).unwrap();
        let want = -0.25 * 0.25 * 0.5f64.ln();
        assert!((focal_loss(&p, &g, FocalParams::default()).unwrap().value - want).abs() < 1e-15);
        let exact = SoftMaskTube::from_tube(&g).unwrap();
        assert!(focal_loss(&exact, &g, FocalParams::default()).unwrap().value < 1e-12);
        // gamma = 0, alpha = 0.5: half of binary cross-entropy
        let p = SoftMaskTube::new(1, 1, 2, vec![0.3, 0.8]).unwrap();
        let g2 = tube(1, 1, 2, &[(0, 0, 0)]);
        let got = focal_loss(&p, &g2, FocalParams { alpha: 0.5, gamma: 0.0 }).unwrap().value;
        let bce = -(0.3f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((got - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn losses_monotone_along_interpolation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<bool> = (0..32).map(|_| rng.gen_bool(0.5)).collect();
        let g = MaskTube::from_dense(2, 4, 4, &v).unwrap();
        let gv: Vec<f64> = v.iter().map(|&b| b as u8 as f64).collect();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for k in 0..5 {
            let t = k as f64 / 4.0;
            let p: Vec<f64> = gv.iter().map(|g| (1.0 - t) * (1.0 - g) + t * g).collect();
            let p = SoftMaskTube::new(2, 4, 4, p).unwrap();
            let cur = (iou_loss(&p, &g).unwrap().value, dice_loss(&p, &g, DICE_SMOOTH).unwrap().value);
            assert!(cur.0 < prev.0 && cur.1 < prev.1, "{cur:?} vs {prev:?}");
            prev = cur;
        }
    }

    fn fd_check(f: impl Fn(&[f64]) -> LossGrad, p: &[f64]) {
        let analytic = f(p).grad;
        let h = 1e-6;
        for i in 0..p.len() {
            let mut hi = p.to_vec();
            hi[i] += h;
            let mut lo = p.to_vec();
            lo[i] -= h;
            let num = (f(&hi).value - f(&lo).value) / (2.0 * h);
            let scale = num.abs().max(analytic[i].abs()).max(1e-8);
            assert!((num - analytic[i]).abs() / scale < 1e-4, "voxel {i}: {num} vs {}", analytic[i]);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p: Vec<f64> = (0..32).map(|_| rng.gen_range(0.05..0.95)).collect();
            let g: Vec<f64> = (0..32).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
            fd_check(|p| iou_loss_grad_raw(p, &g), &p);
            fd_check(|p| dice_loss_grad_raw(p, &g, DICE_SMOOTH), &p);
            fd_check(|p| focal_loss_grad_raw(p, &g, FocalParams::default()), &p);
        }
    }

    proptest! {
        #[test]
        fn rle_round_trip(f in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<bool> = (0..f * h * w).map(|_| rng.gen_bool(0.5)).collect();
            let t = MaskTube::from_dense(f, h, w, &v).unwrap();
            prop_assert_eq!(t.to_dense().unwrap(), v);
        }

        #[test]
        fn iou_symmetric_bounded(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<bool> = (0..27).map(|_| rng.gen_bool(0.4)).collect();
            let b: Vec<bool> = (0..27).map(|_| rng.gen_bool(0.4)).collect();
            let (ta, tb) = (MaskTube::from_dense(3, 3, 3, &a).unwrap(), MaskTube::from_dense(3, 3, 3, &b).unwrap());
            let x = tube_iou(&ta, &tb).unwrap();
            prop_assert_eq!(x, tube_iou(&tb, &ta).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
            if ta.area() > 0 {
                prop_assert_eq!(tube_iou(&ta, &ta).unwrap(), 1.0);
            }
        }
    }
}
