//! `LGAF` dataset files.
//!
//! ```text
//! "LGAF" | version u32 = 1 | seed u64
//! | channels, height, width, classes, patch: u32 | strength, noise: f64 | distractors u32
//! | count u64
//! | per instance: label u32, patch_center 2 x f64, patch_box 4 x f64,
//!                 features C*H*W x f64 (channel-major)
//! ```
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Dataset, Instance, Result, TaskConfig};
use crate::binio::{FormatError, Reader, Writer};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"LGAF";
const VERSION: u32 = 1;

pub fn write_dataset<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = Writer(out);
    let c = &dataset.config;
    w.bytes(MAGIC).map_err(FormatError::from)?;
    w.u32(VERSION).map_err(FormatError::from)?;
    w.u64(dataset.seed).map_err(FormatError::from)?;
    for v in [c.channels, c.height, c.width, c.classes, c.patch] {
        w.usize32(v)?;
    }
    w.f64(c.strength).map_err(FormatError::from)?;
    w.f64(c.noise).map_err(FormatError::from)?;
    w.usize32(c.distractors)?;
    w.u64(dataset.instances.len() as u64)
        .map_err(FormatError::from)?;
    for inst in &dataset.instances {
        w.usize32(inst.label)?;
        let mut body = || -> std::io::Result<()> {
            w.f64(inst.patch_center.0)?;
            w.f64(inst.patch_center.1)?;
            w.f64s(&inst.patch_box)?;
            w.f64s(inst.features.data())
        };
        body().map_err(FormatError::from)?;
    }
    w.0.flush().map_err(FormatError::from)?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = Reader(input);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let seed = r.u64()?;
    let config = TaskConfig {
        channels: r.usize32()?,
        height: r.usize32()?,
        width: r.usize32()?,
        classes: r.usize32()?,
        patch: r.usize32()?,
        strength: r.f64()?,
        noise: r.f64()?,
        distractors: r.usize32()?,
    };
    config
        .validate()
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
    let count = r.u64()?;
    let shape = [config.channels, config.height, config.width];
    let numel = config.channels * config.cells();
    let mut instances = Vec::with_capacity((count as usize).min(1 << 16));
    for _ in 0..count {
        let label = r.usize32()?;
        if label >= config.classes {
            return Err(FormatError::Invalid(format!("label {label} out of range")).into());
        }
        let patch_center = (r.f64()?, r.f64()?);
        let patch_box = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let data = r.f64s(numel)?;
        let features =
            Tensor::new(&shape, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
        instances.push(Instance {
            features,
            label,
            patch_center,
            patch_box,
        });
    }
    r.finish()?;
    if instances.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset {
        config,
        seed,
        instances,
    })
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(FormatError::from)?;
    write_dataset(BufWriter::new(f), dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(FormatError::from)?;
    read_dataset(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_dataset;

    fn small() -> Dataset {
        let cfg = TaskConfig {
            channels: 6,
            ..TaskConfig::default()
        };
        gen_dataset(42, 5, &cfg).unwrap()
    }

    #[test]
    fn roundtrip_and_layout() {
        let d = small();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        assert_eq!(&buf[..4], b"LGAF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 42);
        let header = 4 + 4 + 8 + 5 * 4 + 2 * 8 + 4 + 8;
        let per = 4 + 6 * 8 + 6 * 49 * 8;
        assert_eq!(buf.len(), header + 5 * per);
        let back = read_dataset(buf.as_slice()).unwrap();
        assert!(back.bits_eq(&d));
    }

    fn err_of(buf: &[u8]) -> DataError {
        read_dataset(buf).unwrap_err()
    }

    #[test]
    fn corrupted_files() {
        let d = small();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();

        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"LGAX");
        let e = err_of(&bad);
        assert_eq!(e.to_string(), "bad magic");

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            err_of(&bad),
            DataError::Format(FormatError::VersionMismatch { found: 9, .. })
        ));

        // cut in the middle of the last instance's feature block
        let cut = &buf[..buf.len() - 100];
        let e = err_of(cut);
        assert_eq!(e.to_string(), "truncated payload");

        assert!(matches!(
            err_of(&buf[..2]),
            DataError::Format(FormatError::BadMagic)
        ));
    }
}
