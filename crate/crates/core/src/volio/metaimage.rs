//! MetaImage (`.mha` with the payload inline, `.mhd` with a sibling `.raw`).

use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, write_atomic, IoError};
use crate::volcore::{BinaryMask3D, Geometry, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Short,
    UChar,
    Float,
}

impl ElementType {
    pub fn tag(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "MET_SHORT" => Some(ElementType::Short),
            "MET_UCHAR" => Some(ElementType::UChar),
            "MET_FLOAT" => Some(ElementType::Float),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataFile {
    Local,
    External(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaImageHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub offset: [f64; 3],
    pub element_type: ElementType,
    pub data_file: DataFile,
    pub msb: bool,
}

impl MetaImageHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.element_type.size()
    }

    fn render(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let data_file = match &self.data_file {
            DataFile::Local => "LOCAL".to_string(),
            DataFile::External(name) => name.clone(),
        };
        format!(
            "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = {}\nCompressedData = False\n\
             DimSize = {} {} {}\nElementSpacing = {}\nOffset = {}\nElementType = {}\nElementDataFile = {}\n",
            if self.msb { "True" } else { "False" },
            self.dims[0],
            self.dims[1],
            self.dims[2],
            join(&self.spacing),
            join(&self.offset),
            self.element_type.tag(),
            data_file
        )
    }
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3], IoError> {
    let bad = || IoError::BadHeaderValue {
        path: path.to_path_buf(),
        key: key.to_string(),
        value: value.to_string(),
    };
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|s| s.parse::<T>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| bad())
}

fn parse_bool(path: &Path, key: &str, value: &str) -> Result<bool, IoError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(IoError::BadHeaderValue {
            path: path.to_path_buf(),
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

/// Parses header lines up to and including `ElementDataFile`; returns the
/// header and the byte offset where an inline payload would start.
fn parse_header(path: &Path, bytes: &[u8]) -> Result<(MetaImageHeader, usize), IoError> {
    let mut pos = 0;
    let mut ndims = None;
    let mut dims = None;
    let mut spacing = None;
    let mut offset = None;
    let mut element_type = None;
    let mut msb = false;
    let mut data_file = None;
    while pos < bytes.len() && data_file.is_none() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
        let line = String::from_utf8_lossy(&bytes[pos..end]);
        pos = (end + 1).min(bytes.len());
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(IoError::BadHeaderValue {
                path: path.to_path_buf(),
                key: line.to_string(),
                value: String::new(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" => {
                ndims = Some(value.parse::<usize>().map_err(|_| IoError::BadHeaderValue {
                    path: path.to_path_buf(),
                    key: key.into(),
                    value: value.into(),
                })?)
            }
            "DimSize" => dims = Some(value.to_string()),
            "ElementSpacing" | "ElementSize" if spacing.is_none() || key == "ElementSpacing" => {
                spacing = Some(parse_triple::<f64>(path, key, value)?)
            }
            "Offset" | "Origin" | "Position" => offset = Some(parse_triple::<f64>(path, key, value)?),
            "ElementType" => {
                element_type = Some(ElementType::from_tag(value).ok_or_else(|| IoError::UnsupportedElementType {
                    path: path.to_path_buf(),
                    element_type: value.to_string(),
                })?)
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => msb = parse_bool(path, key, value)?,
            "CompressedData" => {
                if parse_bool(path, key, value)? {
                    return Err(IoError::BadHeaderValue {
                        path: path.to_path_buf(),
                        key: key.into(),
                        value: "compressed payloads are not supported".into(),
                    });
                }
            }
            "ElementDataFile" => {
                data_file = Some(if value == "LOCAL" {
                    DataFile::Local
                } else {
                    DataFile::External(value.to_string())
                })
            }
            _ => {}
        }
    }
    let missing = |key| IoError::MissingKey {
        path: path.to_path_buf(),
        key,
    };
    let ndims = ndims.ok_or_else(|| missing("NDims"))?;
    if ndims != 3 {
        return Err(IoError::UnsupportedDims {
            path: path.to_path_buf(),
            ndims,
        });
    }
    let header = MetaImageHeader {
        dims: parse_triple::<usize>(path, "DimSize", &dims.ok_or_else(|| missing("DimSize"))?)?,
        spacing: spacing.unwrap_or([1.0; 3]),
        offset: offset.unwrap_or([0.0; 3]),
        element_type: element_type.ok_or_else(|| missing("ElementType"))?,
        data_file: data_file.ok_or_else(|| missing("ElementDataFile"))?,
        msb,
    };
    Ok((header, pos))
}

fn decode(header: &MetaImageHeader, payload: &[u8]) -> Vec<f32> {
    let msb = header.msb;
    match header.element_type {
        ElementType::UChar => payload.iter().map(|&b| b as f32).collect(),
        ElementType::Short => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if msb { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }) as f32
            })
            .collect(),
        ElementType::Float => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if msb {
                    f32::from_be_bytes(b)
                } else {
                    f32::from_le_bytes(b)
                }
            })
            .collect(),
    }
}

/// Reads the header and the voxel values, converted to `f32`.
pub fn read_metaimage(path: &Path) -> Result<(MetaImageHeader, Volume3D), IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (header, start) = parse_header(path, &bytes)?;
    let expected = header.payload_len();
    let external;
    let payload: &[u8] = match &header.data_file {
        DataFile::Local => &bytes[start..],
        DataFile::External(name) => {
            let data_path = path.parent().unwrap_or_else(|| Path::new(".")).join(name);
            external = fs::read(&data_path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => IoError::MissingDataFile {
                    path: path.to_path_buf(),
                    data_file: data_path.clone(),
                },
                _ => IoError::Io {
                    path: data_path.clone(),
                    source: e,
                },
            })?;
            &external
        }
    };
    if payload.len() < expected {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(IoError::ExcessData {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let geometry = Geometry::new(header.dims, header.spacing, header.offset)?;
    let data = decode(&header, payload);
    let vol = Volume3D::new(geometry, data)?;
    Ok((header, vol))
}

pub fn read_volume(path: &Path) -> Result<Volume3D, IoError> {
    Ok(read_metaimage(path)?.1)
}

/// Any nonzero voxel is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask3D, IoError> {
    let vol = read_volume(path)?;
    let data = vol.data().iter().map(|&v| v != 0.0).collect();
    Ok(BinaryMask3D::new(*vol.geometry(), data)?)
}

fn encode(data: &[f32], element_type: ElementType) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::with_capacity(data.len() * element_type.size());
    for (i, &v) in data.iter().enumerate() {
        let unrepresentable = || IoError::NotRepresentable {
            index: i,
            value: v,
            element_type: element_type.tag(),
        };
        match element_type {
            ElementType::Float => out.extend_from_slice(&v.to_le_bytes()),
            ElementType::Short => {
                if v.fract() != 0.0 || !(i16::MIN as f32..=i16::MAX as f32).contains(&v) {
                    return Err(unrepresentable());
                }
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
            ElementType::UChar => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(unrepresentable());
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

/// `.mhd` writes a sibling `<stem>.raw`; any other extension gets an inline
/// payload. Values must be exactly representable in `element_type`.
fn write_image(geometry: &Geometry, data: &[f32], path: &Path, element_type: ElementType) -> Result<(), IoError> {
    let payload = encode(data, element_type)?;
    let detached = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    let raw_path: Option<PathBuf> = detached.then(|| path.with_extension("raw"));
    let header = MetaImageHeader {
        dims: geometry.dims,
        spacing: geometry.spacing,
        offset: geometry.origin,
        element_type,
        data_file: match &raw_path {
            Some(p) => DataFile::External(p.file_name().unwrap().to_string_lossy().into_owned()),
            None => DataFile::Local,
        },
        msb: false,
    };
    let mut bytes = header.render().into_bytes();
    match raw_path {
        Some(raw) => {
            write_atomic(&raw, &payload)?;
        }
        None => bytes.extend_from_slice(&payload),
    }
    write_atomic(path, &bytes)
}

pub fn write_volume(vol: &Volume3D, path: &Path, element_type: ElementType) -> Result<(), IoError> {
    write_image(vol.geometry(), vol.data(), path, element_type)
}

/// Stored as `MET_UCHAR` with 1 for foreground.
pub fn write_mask(mask: &BinaryMask3D, path: &Path) -> Result<(), IoError> {
    let data: Vec<f32> = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_image(mask.geometry(), &data, path, ElementType::UChar)
}
