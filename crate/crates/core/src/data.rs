//! Image tensors, on-disk dataset stores and corpus ingestion.
//!
//! A store is a directory holding `manifest.toml` plus a single `images.bin`
//! with CHW u8 records laid out train/val/test back to back. Ingestion is
//! idempotent: the same source produces byte-identical stores.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::{purpose, stream};
use crate::{CoreError, Result};

/// Real-valued C x H x W pixel array in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(CoreError::Shape(format!(
                "expected {} values for {c}x{h}x{w}, got {}",
                c * h * w,
                data.len()
            )));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    pub fn from_u8(c: usize, h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::new(c, h, w, data)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn clamp_unit(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub dataset: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub images_crc32: u32,
    pub source: String,
}

/// A verified image store loaded fully into memory.
pub struct DatasetStore {
    manifest: StoreManifest,
    bytes: Vec<u8>,
}

impl DatasetStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_text = fs::read_to_string(dir.join("manifest.toml"))
            .map_err(|e| CoreError::Dataset(format!("reading manifest in {dir:?}: {e}")))?;
        let manifest: StoreManifest = toml::from_str(&manifest_text)
            .map_err(|e| CoreError::Dataset(format!("parsing manifest: {e}")))?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(CoreError::Dataset(format!(
                "store format {} unsupported (expected {STORE_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let bytes = fs::read(dir.join("images.bin"))?;
        let expected = (manifest.n_train + manifest.n_val + manifest.n_test)
            * manifest.channels
            * manifest.height
            * manifest.width;
        if bytes.len() != expected {
            return Err(CoreError::Dataset(format!(
                "images.bin holds {} bytes, manifest implies {expected}",
                bytes.len()
            )));
        }
        let crc = crc32fast::hash(&bytes);
        if crc != manifest.images_crc32 {
            return Err(CoreError::Dataset(format!(
                "images.bin checksum {crc:#010x} != manifest {:#010x}",
                manifest.images_crc32
            )));
        }
        Ok(Self { manifest, bytes })
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (
            self.manifest.channels,
            self.manifest.height,
            self.manifest.width,
        )
    }

    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.manifest.n_train,
            Split::Val => self.manifest.n_val,
            Split::Test => self.manifest.n_test,
        }
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    fn offset(&self, split: Split, idx: usize) -> usize {
        let base = match split {
            Split::Train => 0,
            Split::Val => self.manifest.n_train,
            Split::Test => self.manifest.n_train + self.manifest.n_val,
        };
        base + idx
    }

    pub fn get(&self, split: Split, idx: usize) -> Result<ImageTensor> {
        if idx >= self.len(split) {
            return Err(CoreError::Dataset(format!(
                "index {idx} out of range for {split:?} of length {}",
                self.len(split)
            )));
        }
        let px = self.manifest.channels * self.manifest.height * self.manifest.width;
        let start = self.offset(split, idx) * px;
        ImageTensor::from_u8(
            self.manifest.channels,
            self.manifest.height,
            self.manifest.width,
            &self.bytes[start..start + px],
        )
    }

    /// Pixel-wise mean over a split; the canonical zero-information
    /// reconstruction used for declared outages.
    pub fn mean_image(&self, split: Split) -> Result<ImageTensor> {
        let n = self.len(split);
        if n == 0 {
            return Err(CoreError::Dataset(format!("{split:?} split is empty")));
        }
        let px = self.manifest.channels * self.manifest.height * self.manifest.width;
        let mut acc = vec![0f64; px];
        for i in 0..n {
            let start = self.offset(split, i) * px;
            for (a, &b) in acc.iter_mut().zip(&self.bytes[start..start + px]) {
                *a += f64::from(b) / 255.0;
            }
        }
        ImageTensor::new(
            self.manifest.channels,
            self.manifest.height,
            self.manifest.width,
            acc.iter().map(|&v| (v / n as f64) as f32).collect(),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub dataset: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub files: Vec<IngestFileReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestFileReport {
    pub file: String,
    pub records: usize,
    pub crc32: u32,
}

fn write_store(
    dest: &Path,
    dataset: &str,
    source: &str,
    (c, h, w): (usize, usize, usize),
    train: &[u8],
    val: &[u8],
    test: &[u8],
) -> Result<StoreManifest> {
    let px = c * h * w;
    assert_eq!(train.len() % px, 0);
    assert_eq!(val.len() % px, 0);
    assert_eq!(test.len() % px, 0);
    fs::create_dir_all(dest)?;
    let mut bytes = Vec::with_capacity(train.len() + val.len() + test.len());
    bytes.extend_from_slice(train);
    bytes.extend_from_slice(val);
    bytes.extend_from_slice(test);
    let manifest = StoreManifest {
        format_version: STORE_FORMAT_VERSION,
        dataset: dataset.to_string(),
        channels: c,
        height: h,
        width: w,
        n_train: train.len() / px,
        n_val: val.len() / px,
        n_test: test.len() / px,
        images_crc32: crc32fast::hash(&bytes),
        source: source.to_string(),
    };
    fs::write(dest.join("images.bin"), &bytes)?;
    fs::write(
        dest.join("manifest.toml"),
        toml::to_string_pretty(&manifest)
            .map_err(|e| CoreError::Dataset(format!("serializing manifest: {e}")))?,
    )?;
    Ok(manifest)
}

const CIFAR_RECORD: usize = 3073; // 1 label byte + 3x32x32 pixels
const CIFAR_BATCH_RECORDS: usize = 10_000;
pub const VALIDATION_CARVE: usize = 5_000;
// Fixed so repeated ingestion produces the identical train/val carve.
const SPLIT_SHUFFLE_SEED: u64 = 0x1F2E_3D4C_5B6A_7988;

/// Ingests the standard CIFAR-10 binary distribution
/// (`data_batch_1.bin` ... `data_batch_5.bin`, `test_batch.bin`, either
/// directly under `src` or under `src/cifar-10-batches-bin`). A validation
/// split of 5000 images is carved from the training set with a fixed
/// shuffle so re-ingestion is idempotent.
pub fn ingest_cifar10(src: &Path, dest: &Path) -> Result<IngestReport> {
    let base = if src.join("cifar-10-batches-bin").is_dir() {
        src.join("cifar-10-batches-bin")
    } else {
        src.to_path_buf()
    };
    let mut files = Vec::new();
    let mut train_raw: Vec<u8> = Vec::with_capacity(5 * CIFAR_BATCH_RECORDS * 3072);
    for i in 1..=5 {
        let name = format!("data_batch_{i}.bin");
        let raw = read_cifar_batch(&base.join(&name), &name, &mut files)?;
        train_raw.extend_from_slice(&raw);
    }
    let test_raw = read_cifar_batch(&base.join("test_batch.bin"), "test_batch.bin", &mut files)?;

    let n_total = train_raw.len() / 3072;
    let mut order: Vec<usize> = (0..n_total).collect();
    shuffle(&mut order, SPLIT_SHUFFLE_SEED);
    let (train_idx, val_idx) = order.split_at(n_total - VALIDATION_CARVE);

    let gather = |idx: &[usize]| -> Vec<u8> {
        let mut out = Vec::with_capacity(idx.len() * 3072);
        for &i in idx {
            out.extend_from_slice(&train_raw[i * 3072..(i + 1) * 3072]);
        }
        out
    };
    let manifest = write_store(
        dest,
        "cifar10",
        &format!("cifar-10 binary batches from {base:?}"),
        (3, 32, 32),
        &gather(train_idx),
        &gather(val_idx),
        &test_raw,
    )?;
    Ok(IngestReport {
        dataset: manifest.dataset,
        n_train: manifest.n_train,
        n_val: manifest.n_val,
        n_test: manifest.n_test,
        files,
    })
}

fn read_cifar_batch(
    path: &Path,
    name: &str,
    files: &mut Vec<IngestFileReport>,
) -> Result<Vec<u8>> {
    let raw = fs::read(path)
        .map_err(|e| CoreError::Dataset(format!("{name}: {e}")))?;
    if raw.len() != CIFAR_RECORD * CIFAR_BATCH_RECORDS {
        return Err(CoreError::Dataset(format!(
            "{name}: expected {} bytes, found {}",
            CIFAR_RECORD * CIFAR_BATCH_RECORDS,
            raw.len()
        )));
    }
    files.push(IngestFileReport {
        file: name.to_string(),
        records: CIFAR_BATCH_RECORDS,
        crc32: crc32fast::hash(&raw),
    });
    // Strip the leading label byte of each record; pixels are already CHW.
    let mut pixels = Vec::with_capacity(CIFAR_BATCH_RECORDS * 3072);
    for rec in raw.chunks_exact(CIFAR_RECORD) {
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(pixels)
}

fn shuffle(order: &mut [usize], seed: u64) {
    use rand::seq::SliceRandom;
    let mut rng = stream(seed, purpose::DATA_SHUFFLE, &[0]);
    order.shuffle(&mut rng);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Generates the deterministic procedural corpus. Image `i` depends only on
/// `(seed, i)`, so any prefix of the corpus is stable under resizing.
pub fn ingest_synthetic(dest: &Path, spec: &SyntheticSpec) -> Result<IngestReport> {
    let total = spec.n_train + spec.n_val + spec.n_test;
    let px = 3 * spec.height * spec.width;
    let mut all = Vec::with_capacity(total * px);
    for i in 0..total {
        let img = synthetic_image(spec.seed, i as u64, spec.height, spec.width);
        all.extend_from_slice(&img.to_u8());
    }
    let (train, rest) = all.split_at(spec.n_train * px);
    let (val, test) = rest.split_at(spec.n_val * px);
    let manifest = write_store(
        dest,
        &format!("synthetic{}", spec.height),
        &format!("procedural corpus, seed {}", spec.seed),
        (3, spec.height, spec.width),
        train,
        val,
        test,
    )?;
    Ok(IngestReport {
        dataset: manifest.dataset,
        n_train: manifest.n_train,
        n_val: manifest.n_val,
        n_test: manifest.n_test,
        files: vec![IngestFileReport {
            file: "images.bin".into(),
            records: total,
            crc32: manifest.images_crc32,
        }],
    })
}

/// One procedural image: a rotation over four texture families (smooth
/// cosine fields, gradients with discs, oriented stripes, color block
/// fields), plus a little pixel noise so latents never collapse.
pub fn synthetic_image(seed: u64, index: u64, h: usize, w: usize) -> ImageTensor {
    use rand::Rng;
    let mut rng = stream(seed, purpose::SYNTH_IMAGE, &[index]);
    let mut img = match index % 4 {
        0 => cosine_field(&mut rng, h, w),
        1 => gradient_discs(&mut rng, h, w),
        2 => stripes(&mut rng, h, w),
        _ => block_field(&mut rng, h, w),
    };
    for v in img.data_mut() {
        *v += rng.gen_range(-0.01..0.01);
    }
    img.clamp_unit()
}

fn cosine_field<R: rand::Rng>(rng: &mut R, h: usize, w: usize) -> ImageTensor {
    let n_comp = rng.gen_range(3..=6);
    let comps: Vec<(f32, f32, f32, f32, [f32; 3])> = (0..n_comp)
        .map(|j| {
            let amp = rng.gen_range(0.08..0.35) / (j as f32 + 1.0);
            let fx = rng.gen_range(0.25..3.0);
            let fy = rng.gen_range(0.25..3.0);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let mix = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            (amp, fx, fy, phase, mix)
        })
        .collect();
    let mut img = ImageTensor::zeros(3, h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.5;
                for &(amp, fx, fy, phase, mix) in &comps {
                    let arg = std::f32::consts::TAU
                        * (fx * x as f32 / w as f32 + fy * y as f32 / h as f32)
                        + phase;
                    v += amp * mix[c] * arg.cos();
                }
                img.data_mut()[c * h * w + y * w + x] = v;
            }
        }
    }
    img
}

fn gradient_discs<R: rand::Rng>(rng: &mut R, h: usize, w: usize) -> ImageTensor {
    let c0: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let alpha: f32 = rng.gen();
    let n_discs = rng.gen_range(1..=3);
    let discs: Vec<(f32, f32, f32, [f32; 3])> = (0..n_discs)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f32),
                rng.gen_range(0.0..h as f32),
                rng.gen_range(0.1..0.3) * h.min(w) as f32,
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let mut img = ImageTensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let t = alpha * x as f32 / w as f32 + (1.0 - alpha) * y as f32 / h as f32;
            let mut px = [
                c0[0] + (c1[0] - c0[0]) * t,
                c0[1] + (c1[1] - c0[1]) * t,
                c0[2] + (c1[2] - c0[2]) * t,
            ];
            for &(cx, cy, r, col) in &discs {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                let m = ((r - d) / 1.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - m) + col[c] * m;
                }
            }
            for c in 0..3 {
                img.data_mut()[c * h * w + y * w + x] = px[c];
            }
        }
    }
    img
}

fn stripes<R: rand::Rng>(rng: &mut R, h: usize, w: usize) -> ImageTensor {
    let theta = rng.gen_range(0.0..std::f32::consts::PI);
    let freq = rng.gen_range(2.0..8.0);
    let sharp = rng.gen_range(1.0..4.0);
    let ca: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let cb: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let (s, c) = theta.sin_cos();
    let mut img = ImageTensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let t = c * x as f32 / w as f32 + s * y as f32 / h as f32;
            let m = 0.5 + 0.5 * ((std::f32::consts::TAU * freq * t).sin() * sharp).tanh();
            for ch in 0..3 {
                img.data_mut()[ch * h * w + y * w + x] = ca[ch] * (1.0 - m) + cb[ch] * m;
            }
        }
    }
    img
}

fn block_field<R: rand::Rng>(rng: &mut R, h: usize, w: usize) -> ImageTensor {
    let grid = *[4usize, 6, 8].iter().nth(rng.gen_range(0..3)).unwrap();
    let colors: Vec<[f32; 3]> = (0..(grid + 1) * (grid + 1))
        .map(|_| [rng.gen(), rng.gen(), rng.gen()])
        .collect();
    let mut img = ImageTensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let gx = x as f32 / w as f32 * grid as f32;
            let gy = y as f32 / h as f32 * grid as f32;
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (gx - ix as f32, gy - iy as f32);
            let at = |i: usize, j: usize| colors[j.min(grid) * (grid + 1) + i.min(grid)];
            for c in 0..3 {
                let top = at(ix, iy)[c] * (1.0 - fx) + at(ix + 1, iy)[c] * fx;
                let bot = at(ix, iy + 1)[c] * (1.0 - fx) + at(ix + 1, iy + 1)[c] * fx;
                img.data_mut()[c * h * w + y * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_images_are_deterministic_and_in_range() {
        let a = synthetic_image(9, 3, 32, 32);
        let b = synthetic_image(9, 3, 32, 32);
        assert_eq!(a, b);
        let c = synthetic_image(9, 4, 32, 32);
        assert_ne!(a, c);
        for &v in a.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn synthetic_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            height: 32,
            width: 32,
            n_train: 12,
            n_val: 4,
            n_test: 6,
            seed: 5,
        };
        let report = ingest_synthetic(dir.path(), &spec).unwrap();
        assert_eq!(report.n_train, 12);
        let store = DatasetStore::open(dir.path()).unwrap();
        assert_eq!(store.len(Split::Train), 12);
        assert_eq!(store.len(Split::Val), 4);
        assert_eq!(store.len(Split::Test), 6);
        let img = store.get(Split::Test, 5).unwrap();
        assert_eq!(img.shape(), (3, 32, 32));
        assert!(store.get(Split::Test, 6).is_err());

        // Idempotent: re-ingest produces the identical byte stream.
        let crc_before = store.manifest().images_crc32;
        ingest_synthetic(dir.path(), &spec).unwrap();
        let store2 = DatasetStore::open(dir.path()).unwrap();
        assert_eq!(store2.manifest().images_crc32, crc_before);
    }

    #[test]
    fn cifar_ingest_parses_and_carves_validation() {
        // Two fabricated source batches at the exact binary layout.
        let src = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            let mut buf = vec![0u8; CIFAR_RECORD * CIFAR_BATCH_RECORDS];
            for (r, rec) in buf.chunks_exact_mut(CIFAR_RECORD).enumerate() {
                rec[0] = (r % 10) as u8;
                for (j, b) in rec[1..].iter_mut().enumerate() {
                    *b = ((i * 31 + r * 7 + j) % 256) as u8;
                }
            }
            fs::write(src.path().join(format!("data_batch_{i}.bin")), &buf).unwrap();
        }
        let mut buf = vec![0u8; CIFAR_RECORD * CIFAR_BATCH_RECORDS];
        for (r, rec) in buf.chunks_exact_mut(CIFAR_RECORD).enumerate() {
            for (j, b) in rec[1..].iter_mut().enumerate() {
                *b = ((r * 11 + j * 3) % 256) as u8;
            }
        }
        fs::write(src.path().join("test_batch.bin"), &buf).unwrap();

        let dest = tempfile::tempdir().unwrap();
        let report = ingest_cifar10(src.path(), dest.path()).unwrap();
        assert_eq!(report.n_train, 45_000);
        assert_eq!(report.n_val, VALIDATION_CARVE);
        assert_eq!(report.n_test, 10_000);
        assert_eq!(report.files.len(), 6);

        let store = DatasetStore::open(dest.path()).unwrap();
        assert_eq!(store.image_shape(), (3, 32, 32));
        let mean = store.mean_image(Split::Test).unwrap();
        assert_eq!(mean.shape(), (3, 32, 32));
    }

    #[test]
    fn cifar_ingest_reports_truncated_files() {
        let src = tempfile::tempdir().unwrap();
        fs::write(src.path().join("data_batch_1.bin"), vec![0u8; 100]).unwrap();
        let dest = tempfile::tempdir().unwrap();
        let err = ingest_cifar10(src.path(), dest.path()).unwrap_err();
        assert!(err.to_string().contains("data_batch_1.bin"));
    }

    #[test]
    fn store_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            height: 16,
            width: 16,
            n_train: 4,
            n_val: 2,
            n_test: 2,
            seed: 1,
        };
        ingest_synthetic(dir.path(), &spec).unwrap();
        let path = dir.path().join("images.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[10] ^= 0xFF;
        fs::write(&path, &bytes).unwrap();
        assert!(DatasetStore::open(dir.path()).is_err());
    }
}
