//! NPY version 1.0 reading and writing for `f32` volumes, plus the JSON
//! sidecar that travels next to every volume file.
//!
//! Only little-endian `<f4` in C order is supported; that is the single
//! dtype the pipeline emits. The header is padded with spaces so that the
//! data section starts on a 64-byte boundary, as NumPy does.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityDomain, Shape3, Volume};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const ALIGN: usize = 64;

fn header_dict(shape: &[usize]) -> String {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}")
}

/// Writes `data` as an NPY 1.0 array of the given shape.
pub fn write_f32<W: Write>(writer: &mut W, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::Npy(format!(
            "shape {shape:?} needs {expected} values, got {}",
            data.len()
        )));
    }
    let mut header = header_dict(shape);
    // magic(6) + version(2) + header_len(2) + header + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');
    let header_len = u16::try_from(header.len())
        .map_err(|_| Error::Npy("header too long for version 1.0".into()))?;

    writer.write_all(&MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&header_len.to_le_bytes())?;
    writer.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in data.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf)?;
    }
    Ok(())
}

struct HeaderInfo {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| Error::Npy(format!("header missing key {key:?}")))?
        + pat.len();
    Ok(dict[start..].trim_start())
}

fn parse_header(dict: &str) -> Result<HeaderInfo> {
    let descr = {
        let rest = dict_value(dict, "descr")?;
        let rest = rest
            .strip_prefix('\'')
            .ok_or_else(|| Error::Npy("descr is not a string".into()))?;
        let end = rest
            .find('\'')
            .ok_or_else(|| Error::Npy("unterminated descr".into()))?;
        rest[..end].to_string()
    };
    let fortran_order = {
        let rest = dict_value(dict, "fortran_order")?;
        if rest.starts_with("True") {
            true
        } else if rest.starts_with("False") {
            false
        } else {
            return Err(Error::Npy("fortran_order is not a bool".into()));
        }
    };
    let shape = {
        let rest = dict_value(dict, "shape")?;
        let rest = rest
            .strip_prefix('(')
            .ok_or_else(|| Error::Npy("shape is not a tuple".into()))?;
        let end = rest
            .find(')')
            .ok_or_else(|| Error::Npy("unterminated shape".into()))?;
        rest[..end]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::Npy(format!("bad dimension {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(HeaderInfo {
        descr,
        fortran_order,
        shape,
    })
}

/// Reads an NPY 1.0/2.0 `<f4` C-order array, returning `(shape, data)`.
pub fn read_f32<R: Read>(reader: &mut R) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Npy("bad magic".into()));
    }
    let mut version = [0u8; 2];
    reader.read_exact(&mut version)?;
    let header_len = match version[0] {
        1 => {
            let mut b = [0u8; 2];
            reader.read_exact(&mut b)?;
            u16::from_le_bytes(b) as usize
        }
        2 => {
            let mut b = [0u8; 4];
            reader.read_exact(&mut b)?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(Error::Npy(format!("unsupported version {v}.{}", version[1]))),
    };
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header)?;
    let header =
        String::from_utf8(header).map_err(|_| Error::Npy("header is not ASCII".into()))?;
    let info = parse_header(&header)?;
    if info.descr != "<f4" {
        return Err(Error::Npy(format!("unsupported dtype {:?}", info.descr)));
    }
    if info.fortran_order {
        return Err(Error::Npy("Fortran order not supported".into()));
    }
    let n: usize = info.shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    reader.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((info.shape, data))
}

/// Metadata written next to every `.npy` volume as `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub scan_id: String,
    pub shape: [usize; 3],
    pub intensity_domain: IntensityDomain,
}

pub fn sidecar_path(npy_path: &Path) -> PathBuf {
    npy_path.with_extension("json")
}

/// Writes `volume` to `path` (NPY) and its sidecar beside it.
pub fn save_volume(path: &Path, scan_id: &str, volume: &Volume) -> Result<()> {
    let shape = volume.shape();
    let mut w = BufWriter::new(File::create(path)?);
    write_f32(
        &mut w,
        &[shape.depth, shape.height, shape.width],
        volume.data(),
    )?;
    w.flush()?;

    let sidecar = Sidecar {
        scan_id: scan_id.to_string(),
        shape: [shape.depth, shape.height, shape.width],
        intensity_domain: volume.domain(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Loads a volume and its sidecar. A missing sidecar yields a raw-domain
/// volume whose scan id is the file stem.
pub fn load_volume(path: &Path) -> Result<(Volume, Sidecar)> {
    let (shape, data) = read_f32(&mut BufReader::new(File::open(path)?))?;
    let [d, h, w] = <[usize; 3]>::try_from(shape.as_slice())
        .map_err(|_| Error::Npy(format!("expected a 3-D array, got shape {shape:?}")))?;

    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        let s: Sidecar = serde_json::from_slice(&std::fs::read(&side)?)?;
        if s.shape != [d, h, w] {
            return Err(Error::Npy(format!(
                "sidecar shape {:?} disagrees with array shape {:?}",
                s.shape,
                [d, h, w]
            )));
        }
        s
    } else {
        Sidecar {
            scan_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            shape: [d, h, w],
            intensity_domain: IntensityDomain::Raw,
        }
    };
    let volume = Volume::new(Shape3::new(d, h, w), data, sidecar.intensity_domain)?;
    Ok((volume, sidecar))
}
