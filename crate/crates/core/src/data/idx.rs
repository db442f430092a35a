//! Big-endian IDX image/label files (the MNIST container format).
//!
//! Image files: magic `0x00000803`, then count/rows/cols as u32, then
//! row-major u8 pixels. Label files: magic `0x00000801`, then count, then
//! u8 labels. Pixels map to `[0, 1]` by dividing by 255.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use super::{DomainKind, DomainSpec, ShiftParams, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(raw: &[u8], path: &Path, words: usize) -> Result<Vec<u32>> {
    if raw.len() < words * 4 {
        return Err(format_err(
            path,
            format!("truncated header: {} bytes, want {}", raw.len(), words * 4),
        ));
    }
    Ok((0..words)
        .map(|i| BigEndian::read_u32(&raw[i * 4..i * 4 + 4]))
        .collect())
}

/// Loads an image/label file pair as a task. All samples land in the train
/// split; the label space is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<TaskSpec> {
    let img_raw = read_file(images_path)?;
    let h = header(&img_raw, images_path, 4)?;
    if h[0] != IMAGE_MAGIC {
        return Err(format_err(
            images_path,
            format!("bad magic {:#010x}, want {IMAGE_MAGIC:#010x}", h[0]),
        ));
    }
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    if n == 0 {
        return Err(format_err(images_path, "zero images"));
    }
    if rows != cols {
        return Err(format_err(
            images_path,
            format!("non-square images {rows}x{cols}"),
        ));
    }
    let want = 16 + n * rows * cols;
    if img_raw.len() < want {
        return Err(format_err(
            images_path,
            format!("truncated payload: {} bytes, want {want}", img_raw.len()),
        ));
    }
    if img_raw.len() > want {
        return Err(format_err(
            images_path,
            format!("{} trailing bytes", img_raw.len() - want),
        ));
    }

    let lab_raw = read_file(labels_path)?;
    let h = header(&lab_raw, labels_path, 2)?;
    if h[0] != LABEL_MAGIC {
        return Err(format_err(
            labels_path,
            format!("bad magic {:#010x}, want {LABEL_MAGIC:#010x}", h[0]),
        ));
    }
    let n_labels = h[1] as usize;
    if n_labels != n {
        return Err(format_err(
            labels_path,
            format!("count mismatch: {n} images, {n_labels} labels"),
        ));
    }
    let want = 8 + n_labels;
    if lab_raw.len() < want {
        return Err(format_err(
            labels_path,
            format!("truncated payload: {} bytes, want {want}", lab_raw.len()),
        ));
    }
    if lab_raw.len() > want {
        return Err(format_err(
            labels_path,
            format!("{} trailing bytes", lab_raw.len() - want),
        ));
    }

    let data: Vec<f32> = img_raw[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = lab_raw[8..].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let images = Tensor::new(&[n, 1, rows, cols], data)?;
    let task = TaskSpec {
        domain: DomainSpec {
            kind: DomainKind::IdxFile,
            image_extent: rows,
            channels: 1,
            n_classes: classes,
            n_samples: n,
            seed: 0,
            shift: ShiftParams::default(),
            classes: Vec::new(),
        },
        classes,
        images,
        labels,
        train: (0..n).collect(),
        val: Vec::new(),
    };
    task.validate()?;
    Ok(task)
}

/// Writes a single-channel task back out as an IDX pair; pixels are
/// quantized to `round(v * 255)`.
pub fn save_idx(task: &TaskSpec, images_path: &Path, labels_path: &Path) -> Result<()> {
    task.validate()?;
    let shape = task.images.shape();
    let (n, c, rows, cols) = (shape[0], shape[1], shape[2], shape[3]);
    if c != 1 {
        return Err(Error::contract(format!(
            "IDX export is single-channel; task has {c} channels"
        )));
    }
    if rows != cols {
        return Err(Error::contract(format!("non-square images {rows}x{cols}")));
    }
    if task.classes > 256 {
        return Err(Error::contract("IDX labels are u8; more than 256 classes"));
    }
    task.images.ensure_finite("idx export")?;

    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.write_u32::<BigEndian>(IMAGE_MAGIC).expect("vec write");
    img.write_u32::<BigEndian>(n as u32).expect("vec write");
    img.write_u32::<BigEndian>(rows as u32).expect("vec write");
    img.write_u32::<BigEndian>(cols as u32).expect("vec write");
    img.extend(
        task.images
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + n);
    lab.write_u32::<BigEndian>(LABEL_MAGIC).expect("vec write");
    lab.write_u32::<BigEndian>(n as u32).expect("vec write");
    lab.extend(task.labels.iter().map(|&l| l as u8));
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_task, ClassDef, ShapeKind};

    fn fixture_bytes() -> (Vec<u8>, Vec<u8>) {
        // 4 images of 2x2, pixels 10*i + j
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        for i in 0..4u8 {
            for j in 0..4u8 {
                img.push(10 * i + j);
            }
        }
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 4, 0, 1, 1, 0];
        (img, lab)
    }

    fn write_pair(dir: &Path, img: &[u8], lab: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("imgs.idx");
        let lp = dir.join("labs.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn hand_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_bytes();
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let task = load_idx(&ip, &lp).unwrap();
        assert_eq!(task.images.shape(), &[4, 1, 2, 2]);
        assert_eq!(task.labels, vec![0, 1, 1, 0]);
        assert_eq!(task.classes, 2);
        let want: Vec<f32> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (10 * i + j) as f32 / 255.0))
            .collect();
        assert_eq!(task.images.data(), &want[..]);
        assert_eq!(task.train.len(), 4);
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (mut img, lab) = fixture_bytes();
        img[2] = 0;
        img[3] = 0;
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (mut img, lab) = fixture_bytes();
        img.truncate(img.len() - 3);
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img, mut lab) = fixture_bytes();
        lab[7] = 3;
        lab.truncate(11);
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn non_square_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([5, 5]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 1, 0];
        let (ip, lp) = write_pair(dir.path(), &img, &lab);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("non-square"), "{err}");
    }

    #[test]
    fn synthetic_roundtrip_is_stable() {
        let spec = crate::data::DomainSpec {
            kind: crate::data::DomainKind::SyntheticShapes,
            image_extent: 16,
            channels: 1,
            n_classes: 2,
            n_samples: 12,
            seed: 3,
            shift: Default::default(),
            classes: vec![
                ClassDef { shape: ShapeKind::Disk, freq_band: 0.0 },
                ClassDef { shape: ShapeKind::Cross, freq_band: 4.0 },
            ],
        };
        let task = synth_task(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i.idx");
        let lp = dir.path().join("l.idx");
        save_idx(&task, &ip, &lp).unwrap();
        let loaded = load_idx(&ip, &lp).unwrap();
        assert_eq!(loaded.labels, task.labels);
        // quantization bound: half of one 8-bit step
        let max_err = loaded
            .images
            .data()
            .iter()
            .zip(task.images.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-6, "max_err {max_err}");
        // second write of the loaded task is byte-identical
        let ip2 = dir.path().join("i2.idx");
        let lp2 = dir.path().join("l2.idx");
        save_idx(&loaded, &ip2, &lp2).unwrap();
        assert_eq!(std::fs::read(&ip).unwrap(), std::fs::read(&ip2).unwrap());
        assert_eq!(std::fs::read(&lp).unwrap(), std::fs::read(&lp2).unwrap());
    }
}
