//! RGB-D frame directories: `rgb_%05d.png` (8-bit RGB) and `depth_%05d.png`
//! (16-bit grayscale, millimeters), numbered from 0 without gaps.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::IoError;
use crate::model::{DepthFrame, RgbFrame, RgbdSequence};

pub fn rgb_name(t: usize) -> String {
    format!("rgb_{t:05}.png")
}

pub fn depth_name(t: usize) -> String {
    format!("depth_{t:05}.png")
}

fn count_frames(dir: &Path, name: fn(usize) -> String) -> usize {
    (0..).take_while(|&t| dir.join(name(t)).is_file()).count()
}

fn frame_error(dir: &Path, message: String) -> IoError {
    IoError::Frames { dir: dir.to_path_buf(), message }
}

/// Loads a frame directory. Every frame must share the first frame's size
/// and every RGB frame needs its depth partner.
pub fn load_frames(dir: &Path, video_id: &str, duration: f64) -> Result<RgbdSequence, IoError> {
    let n = count_frames(dir, rgb_name);
    if n == 0 {
        return Err(frame_error(dir, format!("missing {}", rgb_name(0))));
    }
    let nd = count_frames(dir, depth_name);
    if nd != n {
        return Err(frame_error(dir, format!("{n} rgb frames but {nd} depth frames")));
    }
    let mut dims = None;
    let (mut rgb, mut depth) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        let open = |name: String| image::open(dir.join(&name)).map_err(|e| frame_error(dir, format!("{name}: {e}")));
        let c = open(rgb_name(t))?.to_rgb8();
        let d = open(depth_name(t))?.to_luma16();
        let size = c.dimensions();
        if *dims.get_or_insert(size) != size || d.dimensions() != size {
            return Err(frame_error(dir, format!("frame {t} size differs from frame 0")));
        }
        rgb.push(RgbFrame { pixels: c.into_raw() });
        depth.push(DepthFrame { millimeters: d.into_raw() });
    }
    let (w, h) = dims.expect("at least one frame");
    RgbdSequence::new(video_id, w as usize, h as usize, duration, rgb, depth)
        .map_err(|e| frame_error(dir, e.to_string()))
}

pub fn save_frames(dir: &Path, seq: &RgbdSequence) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let (w, h) = (seq.width() as u32, seq.height() as u32);
    for (t, (c, d)) in seq.rgb_frames().iter().zip(seq.depth_frames()).enumerate() {
        let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w, h, c.pixels.clone()).expect("validated size");
        img.save(dir.join(rgb_name(t))).map_err(|e| frame_error(dir, e.to_string()))?;
        let img: ImageBuffer<Luma<u16>, _> =
            ImageBuffer::from_raw(w, h, d.millimeters.clone()).expect("validated size");
        img.save(dir.join(depth_name(t))).map_err(|e| frame_error(dir, e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, mm: u16) -> RgbdSequence {
        let (w, h) = (5, 3);
        RgbdSequence::new(
            "v",
            w,
            h,
            1.0,
            (0..n).map(|t| RgbFrame { pixels: (0..w * h * 3).map(|i| (i * 5 + t) as u8).collect() }).collect(),
            (0..n).map(|_| DepthFrame { millimeters: vec![mm; w * h] }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_depth_decodes_in_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let s = seq(2, 1000);
        save_frames(dir.path(), &s).unwrap();
        let back = load_frames(dir.path(), "v", 1.0).unwrap();
        assert!(back.depth_frames().iter().all(|d| d.millimeters.iter().all(|&v| v == 1000)));
        assert_eq!(back, s);
    }

    #[test]
    fn frame_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_frames(dir.path(), &seq(3, 7)).unwrap();
        fs::remove_file(dir.path().join(depth_name(2))).unwrap();
        let err = load_frames(dir.path(), "v", 1.0).unwrap_err();
        assert!(err.to_string().contains("3 rgb frames but 2 depth frames"), "{err}");
        let empty = tempfile::tempdir().unwrap();
        assert!(load_frames(empty.path(), "v", 1.0).is_err());
    }
}
