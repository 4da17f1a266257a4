//! Paired datasets of input images `x_phi` and target images `x_mu`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::kv::{self, Fields};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Whether samples are images (values in `[0, 1]`) or encoder codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Pixels,
    Code,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    inputs: Tensor,
    targets: Tensor,
    split: Split,
    space: Space,
}

impl PairedDataset {
    /// Image pairs; every value must lie in `[0, 1]`.
    pub fn new(inputs: Tensor, targets: Tensor, split: Split) -> Result<Self> {
        let ds = Self::build(inputs, targets, split, Space::Pixels)?;
        for t in [&ds.inputs, &ds.targets] {
            if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
            }
        }
        Ok(ds)
    }

    /// Code-space pairs produced by an encoder; only finiteness is required.
    pub fn from_codes(inputs: Tensor, targets: Tensor, split: Split) -> Result<Self> {
        let ds = Self::build(inputs, targets, split, Space::Code)?;
        if !ds.inputs.all_finite() || !ds.targets.all_finite() {
            return Err(Error::NonFinite {
                context: "encoded dataset".into(),
            });
        }
        Ok(ds)
    }

    fn build(inputs: Tensor, targets: Tensor, split: Split, space: Space) -> Result<Self> {
        inputs.expect_same_shape("paired dataset", &targets)?;
        inputs.dims4("paired dataset")?;
        Ok(Self {
            inputs,
            targets,
            split,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-sample shape `(C, H, W)`.
    pub fn item_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// `(x_phi, x_mu)` batch for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((self.inputs.select(indices)?, self.targets.select(indices)?))
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Self> {
        let (inputs, targets) = self.batch(indices)?;
        Ok(Self {
            inputs,
            targets,
            split,
            space: self.space,
        })
    }
}

/// Sample indices for a seeded train/validation split. Each list is sorted.
pub fn split_indices(
    n: usize,
    val_fraction: f64,
    rng: &mut SeededRng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::invalid(format!(
            "val_fraction {val_fraction} of {n} samples leaves an empty split"
        )));
    }
    let perm = rng.permutation(n);
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split(
    ds: &PairedDataset,
    val_fraction: f64,
    rng: &mut SeededRng,
) -> Result<(PairedDataset, PairedDataset)> {
    let (train, val) = split_indices(ds.len(), val_fraction, rng)?;
    Ok((
        ds.subset(&train, Split::Train)?,
        ds.subset(&val, Split::Validation)?,
    ))
}

const IDX_U8_RANK3: [u8; 4] = [0x00, 0x00, 0x08, 0x03];

/// Decodes a rank-3 unsigned-byte IDX image file into `(N, 1, H, W)` in `[0, 1]`.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let fail = |offset, reason: &str| Error::Format {
        what: "IDX file",
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < 4 {
        return Err(fail(bytes.len(), "truncated magic"));
    }
    if bytes[..4] != IDX_U8_RANK3 {
        return Err(fail(0, "bad magic, expected 00 00 08 03"));
    }
    if bytes.len() < 16 {
        return Err(fail(bytes.len(), "truncated header"));
    }
    let dim =
        |i: usize| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (dim(0), dim(1), dim(2));
    if n == 0 || h == 0 || w == 0 {
        return Err(fail(4, "zero dimension"));
    }
    let need = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| fail(4, "dimension overflow"))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(fail(bytes.len(), "truncated pixel data"));
    }
    if payload.len() > need {
        return Err(fail(16 + need, "trailing bytes after pixel data"));
    }
    Tensor::new(
        vec![n, 1, h, w],
        payload.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Encodes `(N, 1, H, W)` images in `[0, 1]` as a rank-3 u8 IDX file.
pub fn encode_idx(images: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = images.dims4("encode_idx")?;
    if c != 1 {
        return Err(Error::invalid("IDX images must have one channel"));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IDX_U8_RANK3);
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_idx(path: &Path, images: &Tensor) -> Result<()> {
    fsutil::write_atomic(path, &encode_idx(images)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// `x_mu = x_phi`.
    SelfPaired,
    /// Targets come from a second IDX file of the same shape.
    TargetFile(PathBuf),
}

pub fn load_idx(images_path: &Path, pairing: &Pairing) -> Result<PairedDataset> {
    let inputs = parse_idx(&fsutil::read(images_path)?)?;
    let targets = match pairing {
        Pairing::SelfPaired => inputs.clone(),
        Pairing::TargetFile(p) => parse_idx(&fsutil::read(p)?)?,
    };
    PairedDataset::new(inputs, targets, Split::Train)
}

const SUPERSAMPLE: usize = 4;

fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Anti-aliased rasterization of a polygon given in pixel coordinates.
fn rasterize(poly: &[(f64, f64)], size: usize, intensity: f64) -> Vec<f64> {
    let mut img = vec![0.0; size * size];
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) * step;
                    let py = y as f64 + (sy as f64 + 0.5) * step;
                    if point_in_polygon(px, py, poly) {
                        hits += 1;
                    }
                }
            }
            img[y * size + x] = intensity * hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    img
}

/// Rotates an image about its center with bilinear sampling; samples falling
/// outside the image read as zero.
pub fn rotate_bilinear(img: &[f64], size: usize, angle_deg: f64) -> Vec<f64> {
    let theta = angle_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let center = (size as f64 - 1.0) / 2.0;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
            0.0
        } else {
            img[y as usize * size + x as usize]
        }
    };
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            // inverse rotation maps output pixels back into the source
            let sx = c * dx + s * dy + center;
            let sy = -s * dx + c * dy + center;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fx) * (1.0 - fy) * at(x0, y0)
                + fx * (1.0 - fy) * at(x0 + 1, y0)
                + (1.0 - fx) * fy * at(x0, y0 + 1)
                + fx * fy * at(x0 + 1, y0 + 1);
            out[y * size + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Randomly shaped, irregular star polygons. Each input is the shape rotated
/// by an angle uniform in `[-max_angle_deg, max_angle_deg]`; each target is
/// the same shape at 0°.
///
/// The number of random draws per sample does not depend on
/// `max_angle_deg`, so one seed yields the same base shapes at any angle.
pub fn synth_pose_dataset(
    n: usize,
    image_size: usize,
    max_angle_deg: f64,
    rng: &mut SeededRng,
) -> Result<PairedDataset> {
    if n == 0 {
        return Err(Error::invalid("synth_pose_dataset: n must be at least 1"));
    }
    if image_size < 8 {
        return Err(Error::invalid(
            "synth_pose_dataset: image_size must be at least 8",
        ));
    }
    if !(0.0..=180.0).contains(&max_angle_deg) {
        return Err(Error::invalid(format!(
            "synth_pose_dataset: max_angle_deg {max_angle_deg} outside [0, 180]"
        )));
    }
    let px = image_size * image_size;
    let mut inputs = Vec::with_capacity(n * px);
    let mut targets = Vec::with_capacity(n * px);
    let center = image_size as f64 / 2.0;
    let radius = image_size as f64 * 0.45;
    for _ in 0..n {
        let vertices = 3 + rng.below(5);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let poly: Vec<(f64, f64)> = (0..vertices)
            .map(|i| {
                let jitter = rng.uniform_range(-0.35, 0.35);
                let r = radius * rng.uniform_range(0.3, 1.0);
                let a = phase + 2.0 * PI * (i as f64 + jitter) / vertices as f64;
                (center + r * a.cos(), center + r * a.sin())
            })
            .collect();
        let intensity = rng.uniform_range(0.6, 1.0);
        let angle = max_angle_deg * (2.0 * rng.uniform() - 1.0);

        let canonical = rasterize(&poly, image_size, intensity);
        targets.extend(rotate_bilinear(&canonical, image_size, 0.0));
        inputs.extend(rotate_bilinear(&canonical, image_size, angle));
    }
    let shape = vec![n, 1, image_size, image_size];
    PairedDataset::new(
        Tensor::new(shape.clone(), inputs)?,
        Tensor::new(shape, targets)?,
        Split::Train,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx {
        images: PathBuf,
        targets: Option<PathBuf>,
    },
    Synthetic {
        n: usize,
        image_size: usize,
        max_angle_deg: f64,
    },
    /// `n·c·h·w` input bytes followed by as many target bytes.
    RawBinary {
        path: PathBuf,
        n: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
}

/// Everything needed to regenerate or reload a dataset and its split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub source: DataSource,
    pub seed: u64,
    pub val_fraction: f64,
}

const NORMALIZATION: &str = "u8_div_255";

impl DatasetManifest {
    /// Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut f = Fields::new(kv::parse(text)?);
        let kind = f.require_str("source")?;
        let path = |f: &mut Fields, key: &str| -> Result<PathBuf> {
            Ok(base_dir.join(f.require_str(key)?))
        };
        let source = match kind.as_str() {
            "idx" => DataSource::Idx {
                images: path(&mut f, "images")?,
                targets: f.take_str("targets").map(|t| base_dir.join(t)),
            },
            "synthetic" => DataSource::Synthetic {
                n: f.require("n")?,
                image_size: f.require("image_size")?,
                max_angle_deg: f.take_or("max_angle_deg", 60.0)?,
            },
            "raw" => DataSource::RawBinary {
                path: path(&mut f, "path")?,
                n: f.require("n")?,
                channels: f.require("channels")?,
                height: f.require("height")?,
                width: f.require("width")?,
            },
            other => {
                return Err(Error::Config {
                    key: "source".into(),
                    reason: format!("unknown source kind `{other}`"),
                })
            }
        };
        let seed = f.take_or("seed", 0u64)?;
        let val_fraction = f.take_or("val_fraction", 0.2)?;
        if let Some(norm) = f.take_str("normalization") {
            if norm != NORMALIZATION {
                return Err(Error::Config {
                    key: "normalization".into(),
                    reason: format!("only `{NORMALIZATION}` is supported"),
                });
            }
        }
        f.finish()?;
        Ok(Self {
            source,
            seed,
            val_fraction,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsutil::read(path)?)
            .map_err(|_| Error::invalid(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.source {
            DataSource::Idx { images, targets } => {
                let _ = writeln!(s, "source=idx\nimages={}", images.display());
                if let Some(t) = targets {
                    let _ = writeln!(s, "targets={}", t.display());
                }
            }
            DataSource::Synthetic {
                n,
                image_size,
                max_angle_deg,
            } => {
                let _ = writeln!(
                    s,
                    "source=synthetic\nn={n}\nimage_size={image_size}\nmax_angle_deg={max_angle_deg}"
                );
            }
            DataSource::RawBinary {
                path,
                n,
                channels,
                height,
                width,
            } => {
                let _ = writeln!(
                    s,
                    "source=raw\npath={}\nn={n}\nchannels={channels}\nheight={height}\nwidth={width}",
                    path.display()
                );
            }
        }
        let _ = writeln!(
            s,
            "seed={}\nval_fraction={}\nnormalization={NORMALIZATION}",
            self.seed, self.val_fraction
        );
        s
    }

    /// The full dataset. Generation draws from the manifest seed's stream;
    /// the returned rng continues that stream (used for the split).
    fn load_full(&self) -> Result<(PairedDataset, SeededRng)> {
        let mut rng = SeededRng::new(self.seed);
        let ds = match &self.source {
            DataSource::Idx { images, targets } => {
                let pairing = targets
                    .clone()
                    .map_or(Pairing::SelfPaired, Pairing::TargetFile);
                load_idx(images, &pairing)?
            }
            DataSource::Synthetic {
                n,
                image_size,
                max_angle_deg,
            } => synth_pose_dataset(*n, *image_size, *max_angle_deg, &mut rng)?,
            DataSource::RawBinary {
                path,
                n,
                channels,
                height,
                width,
            } => {
                let bytes = fsutil::read(path)?;
                let count = n * channels * height * width;
                if count == 0 {
                    return Err(Error::invalid("raw dataset has a zero dimension"));
                }
                if bytes.len() != 2 * count {
                    return Err(Error::Format {
                        what: "raw dataset",
                        offset: bytes.len().min(2 * count),
                        reason: format!("expected {} bytes, found {}", 2 * count, bytes.len()),
                    });
                }
                let shape = vec![*n, *channels, *height, *width];
                let to_t = |b: &[u8]| {
                    Tensor::new(shape.clone(), b.iter().map(|&v| v as f64 / 255.0).collect())
                };
                PairedDataset::new(to_t(&bytes[..count])?, to_t(&bytes[count..])?, Split::Train)?
            }
        };
        Ok((ds, rng))
    }

    pub fn load(&self) -> Result<PairedDataset> {
        Ok(self.load_full()?.0)
    }

    /// `(train, validation)` split of the manifest's dataset.
    pub fn load_split(&self) -> Result<(PairedDataset, PairedDataset)> {
        let (ds, mut rng) = self.load_full()?;
        split(&ds, self.val_fraction, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_pixels_and_shapes() {
        let ok = Tensor::filled(&[2, 1, 2, 2], 0.5);
        assert!(PairedDataset::new(ok.clone(), ok.clone(), Split::Train).is_ok());
        let bad = Tensor::filled(&[2, 1, 2, 2], 1.5);
        assert!(PairedDataset::new(bad.clone(), ok.clone(), Split::Train).is_err());
        assert!(PairedDataset::from_codes(bad, ok.clone(), Split::Train).is_ok());
        let other = Tensor::filled(&[3, 1, 2, 2], 0.5);
        assert!(PairedDataset::new(other, ok, Split::Train).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let (train, val) = split_indices(10, 0.2, &mut SeededRng::new(5)).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let mut all: Vec<_> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(
            split_indices(10, 0.2, &mut SeededRng::new(5)).unwrap(),
            (train, val)
        );
        assert!(split_indices(10, 0.0, &mut SeededRng::new(5)).is_err());
        assert!(split_indices(10, 1.0, &mut SeededRng::new(5)).is_err());
        assert!(split_indices(2, 0.01, &mut SeededRng::new(5)).is_err());
    }

    #[test]
    fn idx_errors_name_offsets() {
        let err = parse_idx(&[0, 0, 8, 1, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("offset 0"), "{err}");
        let mut bytes = encode_idx(&Tensor::filled(&[2, 1, 3, 3], 0.5)).unwrap();
        bytes.pop();
        let err = parse_idx(&bytes).unwrap_err();
        assert!(
            err.to_string().contains(&format!("offset {}", bytes.len())),
            "{err}"
        );
        assert!(parse_idx(&bytes[..10]).is_err());
    }

    #[test]
    fn zero_angle_rotation_is_identity() {
        let img: Vec<f64> = (0..100).map(|i| (i as f64 / 100.0).powi(2)).collect();
        assert_eq!(rotate_bilinear(&img, 10, 0.0), img);
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = DatasetManifest {
            source: DataSource::Synthetic {
                n: 12,
                image_size: 8,
                max_angle_deg: 45.0,
            },
            seed: 3,
            val_fraction: 0.25,
        };
        let back = DatasetManifest::parse(&m.to_text(), Path::new(".")).unwrap();
        assert_eq!(back, m);
        assert!(DatasetManifest::parse(
            "source=synthetic\nn=4\nimage_size=8\nbogus=1",
            Path::new(".")
        )
        .is_err());
    }
}
