//! `LGAM` model files.
//!
//! ```text
//! "LGAM" | version u32 = 1
//! | channels, height, width, masks, down_channels, hidden, classes: u32
//! | s_ratio, lambda_reg, lambda_lga: f64
//! | variant u32 (1 = attention, 0 = baseline)
//! | group count u32
//! | per group: rank u32, extents u32 x rank, values f64 x numel
//! ```
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LgaConfig, LgaModel, Variant};
use crate::binio::{FormatError, Reader, Writer};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"LGAM";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(
    out: W,
    model: &LgaModel,
    variant: Variant,
) -> Result<(), FormatError> {
    let mut w = Writer(out);
    let c = model.config();
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    for v in [
        c.channels,
        c.height,
        c.width,
        c.masks,
        c.down_channels,
        c.hidden,
        c.classes,
    ] {
        w.usize32(v)?;
    }
    for v in [c.s_ratio, c.lambda_reg, c.lambda_lga] {
        w.f64(v)?;
    }
    w.u32(u32::from(variant == Variant::Lga))?;
    w.usize32(model.weights().len())?;
    for t in model.weights() {
        w.usize32(t.rank())?;
        for &e in t.shape() {
            w.usize32(e)?;
        }
        w.f64s(t.data())?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<(LgaModel, Variant), FormatError> {
    let mut r = Reader(input);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let config = LgaConfig {
        channels: r.usize32()?,
        height: r.usize32()?,
        width: r.usize32()?,
        masks: r.usize32()?,
        down_channels: r.usize32()?,
        hidden: r.usize32()?,
        classes: r.usize32()?,
        s_ratio: r.f64()?,
        lambda_reg: r.f64()?,
        lambda_lga: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
    let variant = match r.u32()? {
        1 => Variant::Lga,
        0 => Variant::Baseline,
        v => return Err(FormatError::Invalid(format!("unknown variant tag {v}"))),
    };
    let groups = r.usize32()?;
    let mut weights = Vec::with_capacity(groups.min(64));
    for _ in 0..groups {
        let rank = r.usize32()?;
        if rank == 0 || rank > crate::numerics::MAX_RANK {
            return Err(FormatError::Invalid(format!("tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.usize32())
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| FormatError::Invalid("tensor too large".into()))?;
        let data = r.f64s(n)?;
        weights.push(Tensor::new(&shape, data).map_err(|e| FormatError::Invalid(e.to_string()))?);
    }
    r.finish()?;
    let model =
        LgaModel::from_weights(config, weights).map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok((model, variant))
}

pub fn save_model(path: &Path, model: &LgaModel, variant: Variant) -> Result<(), FormatError> {
    write_model(BufWriter::new(File::create(path)?), model, variant)
}

pub fn load_model(path: &Path) -> Result<(LgaModel, Variant), FormatError> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let m = LgaModel::init(LgaConfig::new(8, 3), 21).unwrap();
        for variant in [Variant::Lga, Variant::Baseline] {
            let mut buf = Vec::new();
            write_model(&mut buf, &m, variant).unwrap();
            assert_eq!(&buf[..4], b"LGAM");
            let (back, v) = read_model(buf.as_slice()).unwrap();
            assert!(back.bits_eq(&m));
            assert_eq!(v, variant);
        }
    }

    #[test]
    fn corrupt_inputs() {
        let m = LgaModel::init(LgaConfig::new(4, 2), 1).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m, Variant::Lga).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_model(bad.as_slice()),
            Err(FormatError::BadMagic)
        ));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            read_model(bad.as_slice()),
            Err(FormatError::VersionMismatch { found: 2, .. })
        ));

        let cut = &buf[..buf.len() - 5];
        assert!(matches!(read_model(cut), Err(FormatError::Truncated)));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_model(extra.as_slice()),
            Err(FormatError::Invalid(_))
        ));
    }
}
