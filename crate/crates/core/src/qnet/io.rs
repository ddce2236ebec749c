//! Binary parameter files.
//!
//! All integers are little-endian `u32` unless noted:
//!
//! ```text
//! magic "FPQN" | version | F | E | H | M | flags | history_scale (f64)
//! | n_params (u64) | n_params × f64
//! ```
//!
//! `flags` bit 0 is `use_quality`, bit 1 is `use_history`. Values follow the
//! tensor order documented on the parent module.

use std::io::{Read, Write};
use std::path::Path;

use super::{QNetConfig, QNetworkParams, FEATURES};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FPQN";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &QNetworkParams) -> std::io::Result<()> {
    let c = params.config();
    let flags = u32::from(c.use_quality) | (u32::from(c.use_history) << 1);
    w.write_all(&MAGIC)?;
    for v in [
        VERSION,
        FEATURES as u32,
        c.embed as u32,
        c.hidden as u32,
        c.head as u32,
        flags,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&c.history_scale.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

fn take<const K: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("truncated parameter file while reading {what}")))?;
    Ok(b)
}

fn take_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4, _>(r, what)?))
}

pub fn read_params<R: Read>(mut r: R) -> Result<QNetworkParams> {
    let magic = take::<4, _>(&mut r, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&MAGIC)
        )));
    }
    let version = take_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let features = take_u32(&mut r, "feature count")?;
    if features as usize != FEATURES {
        return Err(Error::Format(format!(
            "feature count {features}, expected {FEATURES}"
        )));
    }
    let embed = take_u32(&mut r, "embed width")? as usize;
    let hidden = take_u32(&mut r, "hidden width")? as usize;
    let head = take_u32(&mut r, "head width")? as usize;
    let flags = take_u32(&mut r, "flags")?;
    let history_scale = f64::from_le_bytes(take::<8, _>(&mut r, "history scale")?);
    let n = u64::from_le_bytes(take::<8, _>(&mut r, "parameter count")?) as usize;
    let config = QNetConfig {
        embed,
        hidden,
        head,
        history_scale,
        use_quality: flags & 1 != 0,
        use_history: flags & 2 != 0,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let expected = config.layout().len;
    if n != expected {
        return Err(Error::Format(format!(
            "header declares {n} parameters but shapes need {expected}"
        )));
    }
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|_| {
        Error::Format(format!("truncated parameter file: expected {n} values"))
    })?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    QNetworkParams::from_values(config, values)
}

pub fn save_params(params: &QNetworkParams, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(std::io::BufWriter::new(f), params).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<QNetworkParams> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> QNetworkParams {
        let c = QNetConfig {
            embed: 4,
            hidden: 3,
            head: 5,
            use_history: false,
            ..QNetConfig::default()
        };
        QNetworkParams::init(c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    fn bytes(p: &QNetworkParams) -> Vec<u8> {
        let mut out = Vec::new();
        write_params(&mut out, p).unwrap();
        out
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = params();
        let q = read_params(bytes(&p).as_slice()).unwrap();
        assert_eq!(p.config(), q.config());
        let a: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = q.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.bin");
        let p = params();
        save_params(&p, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let b = bytes(&params());
        for cut in [0, 3, 10, 40, b.len() - 1] {
            assert!(matches!(read_params(&b[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn wrong_magic_names_expected() {
        let mut b = bytes(&params());
        b[0] = b'X';
        match read_params(b.as_slice()) {
            Err(Error::Format(msg)) => assert!(msg.contains("FPQN"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut b = bytes(&params());
        b[4] = 99;
        assert!(matches!(read_params(b.as_slice()), Err(Error::Format(_))));
    }
}
