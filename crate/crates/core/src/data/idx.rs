//! IDX image/label files (big-endian headers, unsigned byte payloads).
//! Files ending in `.gz`, or starting with the gzip magic, are decompressed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn parse(path: &Path, magic: u32, n_dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_all(path)?;
    let found = be_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let dims = (0..n_dims)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * n_dims;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok((dims, payload[..expected].to_vec()))
}

/// Loads an IDX image file (magic `0x803`) and label file (magic `0x801`).
/// Pixels are scaled by `1/255`; the class count is `max label + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let (dims, pixels) = parse(images_path, IDX_IMAGES_MAGIC, 3)?;
    let (ldims, labels) = parse(labels_path.as_ref(), IDX_LABELS_MAGIC, 1)?;
    if dims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let features = pixels.into_iter().map(|p| f32::from(p) / 255.0).collect();
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, [1, dims[1], dims[2]], labels, num_classes)
}

/// Writes a single-channel dataset as uncompressed IDX files. Features are
/// quantized to `round(255 · v)`; labels must fit in a byte.
pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let [c, h, w] = ds.shape();
    if c != 1 {
        return Err(Error::InvalidArgument("IDX images must have one channel".into()));
    }
    if ds.num_classes() > 256 {
        return Err(Error::InvalidArgument("IDX labels must fit in one byte".into()));
    }
    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for d in [ds.len(), h, w] {
        img.write_all(&(d as u32).to_be_bytes())?;
    }
    let bytes: Vec<u8> = ds.features().iter().map(|v| (v * 255.0).round() as u8).collect();
    img.write_all(&bytes)?;
    img.flush()?;

    let mut lab = BufWriter::new(File::create(labels_path)?);
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(ds.len() as u32).to_be_bytes())?;
    let bytes: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
    lab.write_all(&bytes)?;
    lab.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, parts: &[&[u8]]) {
        std::fs::write(path, parts.concat()).unwrap();
    }

    fn fixture(dir: &Path, n_images: u32, n_labels: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img.idx");
        let lab = dir.join("lab.idx");
        let mut pixels = vec![0u8; (n_images * 2 * 3) as usize];
        pixels[0] = 255;
        pixels[1] = 51;
        write_raw(
            &img,
            &[
                &IDX_IMAGES_MAGIC.to_be_bytes(),
                &n_images.to_be_bytes(),
                &2u32.to_be_bytes(),
                &3u32.to_be_bytes(),
                &pixels,
            ],
        );
        let labels: Vec<u8> = (0..n_labels).map(|i| (i * 7 % 10) as u8).collect();
        write_raw(
            &lab,
            &[&IDX_LABELS_MAGIC.to_be_bytes(), &n_labels.to_be_bytes(), &labels],
        );
        (img, lab)
    }

    #[test]
    fn loads_handcrafted_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(dir.path(), 2, 2);
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), [1, 2, 3]);
        assert_eq!(ds.labels(), &[0, 7]);
        assert_eq!(ds.sample(0)[0], 1.0);
        assert_eq!(ds.sample(0)[1], 0.2);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(dir.path(), 2, 3);
        assert!(matches!(
            load_idx(&img, &lab),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(dir.path(), 2, 2);
        assert!(matches!(load_idx(&lab, &lab), Err(Error::BadMagic { .. })));
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Truncated { .. })));
        std::fs::write(&img, &bytes[..6]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Truncated { .. })));
    }

    #[test]
    fn gzip_and_round_trip() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(dir.path(), 3, 3);
        let ds = load_idx(&img, &lab).unwrap();

        let gz = dir.path().join("img.idx.gz");
        let mut enc = GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(&std::fs::read(&img).unwrap()).unwrap();
        enc.finish().unwrap();
        assert_eq!(load_idx(&gz, &lab).unwrap().features(), ds.features());

        let (img2, lab2) = (dir.path().join("a"), dir.path().join("b"));
        write_idx(&ds, &img2, &lab2).unwrap();
        assert_eq!(std::fs::read(&img2).unwrap(), std::fs::read(&img).unwrap());
        let back = load_idx(&img2, &lab2).unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }
}
