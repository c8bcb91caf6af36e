//! Binary field files: a fixed 1024-byte text header, then `n*n`
//! little-endian f64 values in row-major node order.
//!
//! Header lines are `key=value`; floats use round-trip formatting, so
//! read(write(f)) reproduces every bit.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::torus::{Field, LogSingularity, TorusDomain};

pub const MAGIC: &[u8; 8] = b"CSVLFLD\n";
pub const HEADER_LEN: usize = 1024;
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldFile {
    pub name: String,
    pub n: usize,
    pub periods: [f64; 2],
    pub offset: [f64; 2],
    pub declared_mean: Option<f64>,
    pub singular: Vec<LogSingularity>,
    pub values: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl FieldFile {
    pub fn from_field(name: &str, f: &Field) -> Self {
        Self {
            name: name.to_string(),
            n: f.domain.n(),
            periods: f.domain.periods(),
            offset: f.domain.offset(),
            declared_mean: f.declared_mean,
            singular: f.singular.clone(),
            values: f.values.clone(),
        }
    }

    pub fn to_field(&self) -> Result<Field> {
        let dom = TorusDomain::new(self.periods[0], self.periods[1], self.n, self.offset)?;
        let mut f = Field::new(&dom, self.values.clone())?;
        f.declared_mean = self.declared_mean;
        f.singular = self.singular.clone();
        Ok(f)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.name.contains(['\n', '\r']) {
            return Err(bad("field name must be a single line"));
        }
        if self.values.len() != self.n * self.n {
            return Err(bad(format!("{} values for n = {}", self.values.len(), self.n)));
        }
        let mut h = String::new();
        let _ = writeln!(h, "version={VERSION}");
        let _ = writeln!(h, "name={}", self.name);
        let _ = writeln!(h, "n={}", self.n);
        let _ = writeln!(h, "periods={:?},{:?}", self.periods[0], self.periods[1]);
        let _ = writeln!(h, "offset={:?},{:?}", self.offset[0], self.offset[1]);
        let _ = writeln!(h, "mean={}", self.declared_mean.map_or("none".to_string(), |m| format!("{m:?}")));
        let sing: Vec<String> =
            self.singular.iter().map(|s| format!("{:?},{:?},{:?}", s.point[0], s.point[1], s.coeff)).collect();
        let _ = writeln!(h, "singular={}", sing.join(";"));
        if MAGIC.len() + h.len() + 1 > HEADER_LEN {
            return Err(bad("header does not fit in 1024 bytes (name or singularity list too long)"));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(h.as_bytes());
        out.resize(HEADER_LEN - 1, b' ');
        out.push(b'\n');
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a field file (bad magic)"));
        }
        let text = std::str::from_utf8(&bytes[MAGIC.len()..HEADER_LEN]).map_err(|_| bad("header is not UTF-8"))?;
        let mut kv = std::collections::BTreeMap::new();
        for line in text.split('\n').filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("header line `{line}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("header misses `{k}`")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
        let pair = |s: &str| -> Result<[f64; 2]> {
            let (a, b) = s.split_once(',').ok_or_else(|| bad(format!("`{s}` is not a pair")))?;
            Ok([num(a)?, num(b)?])
        };
        let version: u32 = get("version")?.parse().map_err(|_| bad("bad version"))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n: usize = get("n")?.parse().map_err(|_| bad("bad n"))?;
        let declared_mean = match get("mean")? {
            "none" => None,
            m => Some(num(m)?),
        };
        let singular = get("singular")?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                let c: Vec<&str> = s.split(',').collect();
                if c.len() != 3 {
                    return Err(bad(format!("singularity `{s}`")));
                }
                Ok(LogSingularity { point: [num(c[0])?, num(c[1])?], coeff: num(c[2])? })
            })
            .collect::<Result<Vec<_>>>()?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 8 * n * n {
            return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), 8 * n * n)));
        }
        let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            name: get("name")?.to_string(),
            n,
            periods: pair(get("periods")?)?,
            offset: pair(get("offset")?)?,
            declared_mean,
            singular,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Write through a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let d = TorusDomain::new(1.0, 0.7, 16, [0.5, 0.25]).unwrap();
        let mut f = Field::from_fn(&d, |y| (y[0] * 7.3).sin() / 3.0 + y[1].ln_1p()).with_mean(0.1);
        f.singular.push(LogSingularity { point: [0.1, 0.2], coeff: -2.0 });
        f.values[3] = -0.0;
        f.values[4] = f64::MIN_POSITIVE / 4.0;
        let bytes = FieldFile::from_field("u0", &f).to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 256);
        let back = FieldFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.name, "u0");
        let g = back.to_field().unwrap();
        assert_eq!(g.domain, d);
        assert_eq!(g.declared_mean, Some(0.1));
        assert_eq!(g.singular, f.singular);
        assert!(g.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(FieldFile::from_field("u0", &g).to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(FieldFile::from_bytes(b"nope").is_err());
        let d = TorusDomain::unit(16).unwrap();
        let mut bytes = FieldFile::from_field("z", &Field::zeros(&d)).to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(FieldFile::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn atomic_write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.field");
        let d = TorusDomain::unit(16).unwrap();
        let ff = FieldFile::from_field("c", &Field::constant(&d, 2.5));
        ff.write(&p).unwrap();
        assert_eq!(FieldFile::read(&p).unwrap(), ff);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
