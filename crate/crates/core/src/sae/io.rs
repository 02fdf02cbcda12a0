use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{SaeModel, TrainHyper};
use crate::error::{Error, Result};
use crate::mixture::Reader;

pub const MODEL_MAGIC: &[u8; 4] = b"MSAE";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub d: usize,
    pub c: usize,
    pub k: usize,
    pub seed: u64,
    pub hyper: TrainHyper,
}

/// `MSAE` layout: header, then `W_enc` (`c x d`) and `W_dec` (`d x c`) as
/// row-major little-endian f32.
pub fn write_model<W: Write>(model: &SaeModel, seed: u64, hyper: &TrainHyper, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&ModelHeader {
        d: model.d(),
        c: model.c(),
        k: model.k(),
        seed,
        hyper: hyper.clone(),
    })?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(model.c() * model.d() * 4);
    for &v in model.encoder() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in model.dictionary().t() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn save_model(model: &SaeModel, seed: u64, hyper: &TrainHyper, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_model(model, seed, hyper, std::io::BufWriter::new(file))
}

pub fn read_model(bytes: &[u8]) -> Result<(SaeModel, ModelHeader)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MODEL_MAGIC, MODEL_VERSION)?;
    let at = r.offset();
    let header: ModelHeader = r.json_header()?;
    let (c, d) = (header.c, header.d);
    if c == 0 || d == 0 || header.k == 0 || header.k > c {
        return Err(Error::format(at, format!("invalid dims d={d}, c={c}, k={}", header.k)));
    }
    let encoder = Array2::from_shape_vec((c, d), r.f32s(c * d)?.into_iter().map(f64::from).collect()).expect("shape");
    let decoder = Array2::from_shape_vec((d, c), r.f32s(c * d)?.into_iter().map(f64::from).collect()).expect("shape");
    r.finish()?;
    let model = SaeModel::new(encoder, decoder.t().to_owned(), header.k)?;
    Ok((model, header))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(SaeModel, ModelHeader)> {
    read_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_at_storage_precision() {
        let model = SaeModel::init(5, 9, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut bytes = Vec::new();
        write_model(&model, 7, &TrainHyper::default(), &mut bytes).unwrap();
        let (back, header) = read_model(&bytes).unwrap();
        assert_eq!((header.d, header.c, header.k, header.seed), (5, 9, 2, 7));
        for (a, b) in model.dictionary().iter().zip(back.dictionary()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let mut again = Vec::new();
        write_model(&back, 7, &TrainHyper::default(), &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn bad_files_rejected() {
        let model = SaeModel::init(3, 4, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut bytes = Vec::new();
        write_model(&model, 0, &TrainHyper::default(), &mut bytes).unwrap();
        assert!(matches!(
            read_model(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(read_model(&wrong), Err(Error::Format { offset: 0, .. })));
    }
}
