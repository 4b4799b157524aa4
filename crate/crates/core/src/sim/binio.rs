//! Versioned little-endian dump of a [`ChannelSet`].
//!
//! Layout: `"CFMM"`, `u32` version, `u32` M, N, K, N_T, then row-major
//! `f64` arrays: noise_ap, noise_ue, beta `[M][K]`, A `[M][K]` (0/1),
//! SSF `[N_T][M][K][N][re,im]`, pilot noise `[N_T][M][K][N][re,im]`.

use std::io::{Read, Write};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::scalar::Scalar;
use crate::sim::channel::{Association, ChannelSet};

pub const MAGIC: &[u8; 4] = b"CFMM";
pub const VERSION: u32 = 1;

pub fn write_channels<T: Scalar, W: Write>(ch: &ChannelSet<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, ch.m() as u32, ch.n() as u32, ch.k() as u32, ch.n_t() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut put = |x: f64| w.write_all(&x.to_le_bytes());
    put(ch.noise_ap.as_f64())?;
    put(ch.noise_ue.as_f64())?;
    for &b in ch.beta.as_slice() {
        put(b.as_f64())?;
    }
    for &a in ch.assoc.0.as_slice() {
        put(if a { 1.0 } else { 0.0 })?;
    }
    for z in ch.ssf_raw().iter().chain(ch.pilot_noise_raw()) {
        put(z.re.as_f64())?;
        put(z.im.as_f64())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_channels<R: Read>(mut r: R) -> Result<ChannelSet<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (m, n, k, n_t) =
        (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    let noise_ap = read_f64(&mut r)?;
    let noise_ue = read_f64(&mut r)?;
    let beta = (0..m * k).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let assoc = (0..m * k).map(|_| read_f64(&mut r).map(|v| v != 0.0)).collect::<Result<Vec<_>>>()?;
    let mut complex = |len: usize| -> Result<Vec<Complex<f64>>> {
        (0..len).map(|_| Ok(Complex::new(read_f64(&mut r)?, read_f64(&mut r)?))).collect()
    };
    let len = n_t * m * k * n;
    let ssf = complex(len)?;
    let noise = complex(len)?;
    ChannelSet::from_raw_parts(
        Grid::from_vec(m, k, beta)?,
        Association::new(Grid::from_vec(m, k, assoc)?)?,
        noise_ap,
        noise_ue,
        n,
        n_t,
        ssf,
        noise,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::SystemConfig;

    #[test]
    fn dump_roundtrips_and_has_header() {
        let cfg = SystemConfig::desk();
        let (_, ch) = ChannelSet::<f64>::generate(&cfg, 4).unwrap();
        let mut buf = Vec::new();
        write_channels(&ch, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CFMM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        let expected = 4 + 5 * 4 + 8 * (2 + 2 * 18 + 2 * 2 * 5 * 18 * 2);
        assert_eq!(buf.len(), expected);
        let back = read_channels(buf.as_slice()).unwrap();
        assert_eq!(back, ch);
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(read_channels(&b"XXXX\x01\x00\x00\x00"[..]).is_err());
    }
}
