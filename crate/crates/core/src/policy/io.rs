//! Little-endian parameter file:
//!
//! ```text
//! magic[8] | u32 schema | u32 n_dims | u32 dims[n_dims] | f64 t_max | f64 r_max
//! | u64 n_values | f32 values[n_values]
//! ```
//!
//! `dims` = height, width, input channels, three conv widths, three kernel
//! sizes, stride, pool grid, hidden width, head widths (3, 3, 1).

use super::{Architecture, PolicyError, PolicyParams, INPUT_CHANNELS};
use std::path::Path;

pub const PARAMS_MAGIC: &[u8; 8] = b"SPLATPOL";
pub const PARAMS_SCHEMA_VERSION: u32 = 1;

fn dims(a: &Architecture) -> Vec<u32> {
    let mut d = vec![a.height, a.width, INPUT_CHANNELS];
    d.extend_from_slice(&a.conv_channels);
    d.extend_from_slice(&a.conv_kernels);
    d.extend_from_slice(&[a.stride, a.pool_grid, a.hidden, 3, 3, 1]);
    d.into_iter().map(|v| v as u32).collect()
}

pub fn save_params(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let d = dims(&params.arch);
    let mut buf = Vec::with_capacity(64 + 4 * params.values.len());
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(&PARAMS_SCHEMA_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d.len() as u32).to_le_bytes());
    for v in &d {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&params.arch.t_max.to_le_bytes());
    buf.extend_from_slice(&params.arch.r_max.to_le_bytes());
    buf.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: impl Into<String>) -> PolicyError {
        PolicyError::Corrupt {
            path: self.path.to_path_buf(),
            position: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], PolicyError> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, PolicyError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, PolicyError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Loads parameters and checks them against the expected architecture.
pub fn load_params(path: &Path, expected: &Architecture) -> Result<PolicyParams, PolicyError> {
    let buf = std::fs::read(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(8, "magic")? != PARAMS_MAGIC {
        r.pos = 0;
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32("schema version")?;
    if version != PARAMS_SCHEMA_VERSION {
        r.pos -= 4;
        return Err(r.corrupt(format!("unsupported schema version {version}")));
    }
    let n_dims = r.u32("dimension count")? as usize;
    if n_dims > 64 {
        r.pos -= 4;
        return Err(r.corrupt(format!("implausible dimension count {n_dims}")));
    }
    let mut found = Vec::with_capacity(n_dims);
    for i in 0..n_dims {
        found.push(r.u32(&format!("dimension {i}"))?);
    }
    let t_max = r.f64("t_max")?;
    let r_max = r.f64("r_max")?;
    let want = dims(expected);
    if found != want || t_max != expected.t_max || r_max != expected.r_max {
        return Err(PolicyError::ArchitectureMismatch {
            expected: format!("{want:?} t{} r{}", expected.t_max, expected.r_max),
            found: format!("{found:?} t{t_max} r{r_max}"),
        });
    }
    let n = r.u64("value count")? as usize;
    let total = expected.layout().total;
    if n != total {
        r.pos -= 8;
        return Err(r.corrupt(format!("value count {n} does not match layout size {total}")));
    }
    let raw = r.take(4 * n, "values")?;
    if r.pos != buf.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(PolicyParams {
        arch: *expected,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Architecture::default();
        let p = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&p, &path).unwrap();
        let q = load_params(&path, &arch).unwrap();
        assert!(p.values.iter().zip(&q.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(p, q);
    }

    #[test]
    fn different_layer_sizes_rejected() {
        let arch = Architecture::default();
        let p = PolicyParams::zeros(arch);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&p, &path).unwrap();
        let other = Architecture {
            hidden: 64,
            ..arch
        };
        assert!(matches!(
            load_params(&path, &other),
            Err(PolicyError::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_header_reports_position() {
        let arch = Architecture::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&PolicyParams::zeros(arch), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 7;
        std::fs::write(&path, &bytes).unwrap();
        match load_params(&path, &arch) {
            Err(PolicyError::Corrupt { position, .. }) => assert_eq!(position, 8),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(matches!(
            load_params(&path, &arch),
            Err(PolicyError::Corrupt { position: 0, .. })
        ));
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(load_params(&path, &arch), Err(PolicyError::Corrupt { .. })));
    }
}
