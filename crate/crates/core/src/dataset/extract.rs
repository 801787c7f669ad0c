//! Uniform-rate frame sampling from animated clips.
//!
//! Clips are read through the `image` crate's animation decoders (GIF and
//! APNG). Frame timing is kept as exact rationals in milliseconds so sample
//! times `k / rate` land on exact multiples regardless of the clip's delays.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use image::codecs::gif::GifDecoder;
use image::codecs::png::PngDecoder;
use image::{AnimationDecoder, DynamicImage, Frames};
use num_rational::Ratio;

use super::manifest::FrameRecord;
use crate::error::{Error, Result};

type Ms = Ratio<u64>;

/// Sampling rate in frames per second, kept exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRate(Ratio<u64>);

impl FrameRate {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::Parameter("frame rate must be positive".into()));
        }
        Ok(FrameRate(Ratio::new(numer, denom)))
    }

    pub fn as_ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Time of the k-th sample in milliseconds.
    fn sample_ms(&self, k: u64) -> Ms {
        Ratio::new(k * 1000 * self.0.denom(), *self.0.numer())
    }

    /// Time of the k-th sample in seconds.
    pub fn sample_seconds(&self, k: u64) -> f64 {
        (k * self.0.denom()) as f64 / *self.0.numer() as f64
    }
}

impl FromStr for FrameRate {
    type Err = Error;

    /// Accepts `2`, `0.5` or `30000/1001`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parameter(format!("cannot parse frame rate {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return FrameRate::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || (int.is_empty() && frac.is_empty()) {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let numer: u64 = digits.parse().map_err(|_| bad())?;
        FrameRate::new(numer, 10u64.pow(frac.len() as u32))
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// Timing summary of a decodable clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipInfo {
    pub frame_count: u64,
    pub duration_ms: Ratio<u64>,
    pub width: u32,
    pub height: u32,
}

impl ClipInfo {
    pub fn duration_seconds(&self) -> f64 {
        *self.duration_ms.numer() as f64 / *self.duration_ms.denom() as f64 / 1000.0
    }

    /// Mean native frame rate (frames per second).
    pub fn native_rate(&self) -> Ratio<u64> {
        Ratio::new(self.frame_count * 1000, 1) / self.duration_ms
    }
}

/// Number of samples `t = k / rate` with `t < duration`.
pub fn expected_sample_count(duration_ms: Ratio<u64>, rate: FrameRate) -> u64 {
    let product = duration_ms * rate.as_ratio() / 1000;
    product.ceil().to_integer()
}

fn open_frames(path: &Path) -> Result<Frames<'static>> {
    let ingest = |reason: String| Error::Ingest {
        path: path.to_path_buf(),
        reason,
    };
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    if n >= 4 && &magic[..4] == b"GIF8" {
        let decoder = GifDecoder::new(reader).map_err(|e| ingest(e.to_string()))?;
        Ok(decoder.into_frames())
    } else if n == 8 && magic == [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a] {
        let decoder = PngDecoder::new(reader).map_err(|e| ingest(e.to_string()))?;
        if !decoder.is_apng().map_err(|e| ingest(e.to_string()))? {
            return Err(ingest("PNG file is a still image, not an animation".into()));
        }
        Ok(decoder.apng().map_err(|e| ingest(e.to_string()))?.into_frames())
    } else {
        Err(ingest("unrecognized container (expected animated GIF or APNG)".into()))
    }
}

fn frame_delay(frame: &image::Frame, path: &Path, index: u64) -> Result<Ms> {
    let (numer, denom) = frame.delay().numer_denom_ms();
    if numer == 0 || denom == 0 {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            reason: format!("frame {index} has zero display duration"),
        });
    }
    Ok(Ratio::new(numer as u64, denom as u64))
}

/// Decodes the whole clip once to measure its timing.
pub fn probe_clip(path: &Path) -> Result<ClipInfo> {
    let mut info = ClipInfo {
        frame_count: 0,
        duration_ms: Ratio::from_integer(0),
        width: 0,
        height: 0,
    };
    for (i, frame) in open_frames(path)?.enumerate() {
        let frame = frame.map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        info.duration_ms += frame_delay(&frame, path, i as u64)?;
        info.frame_count += 1;
        (info.width, info.height) = frame.buffer().dimensions();
    }
    if info.frame_count == 0 {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            reason: "clip contains no frames".into(),
        });
    }
    Ok(info)
}

/// Video identifier derived from the file stem.
pub fn video_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Samples `video_file` at `t = 0, 1/rate, 2/rate, …` (all `t` strictly inside
/// the clip), writing each sample as a PNG into `out_dir`. Returned records are
/// unlabeled and in timestamp order; `image_path` is relative to `out_dir`.
pub fn extract_frames(video_file: &Path, rate: FrameRate, out_dir: &Path) -> Result<Vec<FrameRecord>> {
    let info = probe_clip(video_file)?;
    if rate.as_ratio() > info.native_rate() {
        return Err(Error::Parameter(format!(
            "rate {rate} fps exceeds the native rate of {} ({:.3} fps)",
            video_file.display(),
            *info.native_rate().numer() as f64 / *info.native_rate().denom() as f64
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let vid = video_id(video_file);
    let mut records = Vec::new();
    let mut k = 0u64;
    let mut start = Ms::from_integer(0);
    for (i, frame) in open_frames(video_file)?.enumerate() {
        let frame = frame.map_err(|e| Error::Ingest {
            path: video_file.to_path_buf(),
            reason: e.to_string(),
        })?;
        let end = start + frame_delay(&frame, video_file, i as u64)?;
        if rate.sample_ms(k) < end {
            let still = DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8();
            while rate.sample_ms(k) < end {
                let frame_id = format!("{vid}_{k:05}");
                let file_name = format!("{frame_id}.png");
                let path = out_dir.join(&file_name);
                still.save(&path).map_err(|e| Error::image(&path, e))?;
                records.push(FrameRecord {
                    frame_id,
                    source_video_id: vid.clone(),
                    timestamp_s: rate.sample_seconds(k),
                    image_path: file_name,
                    labels: None,
                    annotator_id: None,
                    human_regions: Vec::new(),
                });
                k += 1;
            }
        }
        start = end;
    }
    Ok(records)
}

/// Extracts several clips concurrently into one directory. Output order
/// follows `videos`.
pub fn extract_many(videos: &[&Path], rate: FrameRate, out_dir: &Path) -> Result<Vec<FrameRecord>> {
    let results: Vec<Result<Vec<FrameRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = videos
            .iter()
            .map(|v| scope.spawn(move || extract_frames(v, rate, out_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("extraction thread panicked"))
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}
