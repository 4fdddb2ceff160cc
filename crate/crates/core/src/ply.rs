//! PLY subset reader and writer.
//!
//! Supported: `ascii 1.0` and `binary_little_endian 1.0`, an `element vertex`
//! with `float`/`double` x, y, z and optional `uchar` red, green, blue. Other
//! scalar vertex properties are skipped. Errors carry the byte offset at which
//! the problem was detected.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cloud::{Color, PointCloud, Position};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    ty: ScalarType,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
    /// Offset of the declaring header line, for error reporting.
    offset: u64,
}

impl Element {
    fn record_size(&self) -> usize {
        self.properties.iter().map(|p| p.ty.size()).sum()
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Byte offset of the first payload byte.
    len: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::ply(offset as u64, "unterminated header"));
        };
        let line_offset = offset as u64;
        let raw = &rest[..nl];
        offset += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::ply(line_offset, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        if first {
            if line != "ply" {
                return Err(Error::ply(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let kind = tokens.next();
                let version = tokens.next();
                if version != Some("1.0") {
                    return Err(Error::ply(line_offset, "unsupported PLY version"));
                }
                format = Some(match kind {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(Error::ply(
                            line_offset,
                            format!("unsupported format '{other}'"),
                        ))
                    }
                    None => return Err(Error::ply(line_offset, "malformed format line")),
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::ply(line_offset, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::ply(line_offset, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    offset: line_offset,
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::ply(line_offset, "property before any element"))?;
                let ty = tokens
                    .next()
                    .ok_or_else(|| Error::ply(line_offset, "property without type"))?;
                if ty == "list" {
                    if element.name == "vertex" || element.count > 0 {
                        return Err(Error::ply(
                            line_offset,
                            format!("list property in element '{}' is unsupported", element.name),
                        ));
                    }
                    continue;
                }
                let ty = ScalarType::parse(ty).ok_or_else(|| {
                    Error::ply(line_offset, format!("unsupported property type '{ty}'"))
                })?;
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::ply(line_offset, "property without name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    ty,
                });
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::ply(
                    line_offset,
                    format!("unexpected header keyword '{other}'"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| Error::ply(0, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        len: offset,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout> {
    let mut xyz = [0usize; 3];
    for (slot, name) in ["x", "y", "z"].iter().enumerate() {
        let idx = element
            .find(name)
            .ok_or_else(|| Error::ply(element.offset, format!("vertex lacks property '{name}'")))?;
        if !matches!(element.properties[idx].ty, ScalarType::F32 | ScalarType::F64) {
            return Err(Error::ply(
                element.offset,
                format!("property '{name}' must be float or double"),
            ));
        }
        xyz[slot] = idx;
    }
    let found: Vec<Option<usize>> = ["red", "green", "blue"]
        .iter()
        .map(|n| element.find(n))
        .collect();
    let rgb = if found.iter().all(Option::is_some) {
        let idx = [found[0].unwrap(), found[1].unwrap(), found[2].unwrap()];
        for &i in &idx {
            if element.properties[i].ty != ScalarType::U8 {
                return Err(Error::ply(
                    element.offset,
                    format!("color property '{}' must be uchar", element.properties[i].name),
                ));
            }
        }
        Some(idx)
    } else {
        None
    };
    Ok(VertexLayout { xyz, rgb })
}

fn read_scalar(bytes: &[u8], ty: ScalarType) -> f64 {
    match ty {
        ScalarType::I8 => bytes[0] as i8 as f64,
        ScalarType::U8 => bytes[0] as f64,
        ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
    }
}

/// Parses a PLY document held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::ply(0, "no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    let layout = vertex_layout(vertex)?;
    let preceding = &header.elements[..vertex_pos];
    match header.format {
        PlyFormat::BinaryLittleEndian => {
            let skip: usize = preceding.iter().map(|e| e.count * e.record_size()).sum();
            parse_binary(bytes, header.len + skip, vertex, &layout)
        }
        PlyFormat::Ascii => {
            let skip_lines: usize = preceding.iter().map(|e| e.count).sum();
            parse_ascii(bytes, header.len, skip_lines, vertex, &layout)
        }
    }
}

fn parse_binary(
    bytes: &[u8],
    start: usize,
    vertex: &Element,
    layout: &VertexLayout,
) -> Result<PointCloud> {
    let record = vertex.record_size();
    let needed = vertex
        .count
        .checked_mul(record)
        .ok_or_else(|| Error::ply(vertex.offset, "vertex count overflows"))?;
    let available = bytes.len().saturating_sub(start);
    if available < needed {
        let complete = available / record.max(1);
        return Err(Error::ply(
            (start + complete * record) as u64,
            format!(
                "truncated payload: {} of {} vertices present",
                complete, vertex.count
            ),
        ));
    }
    let mut offsets = Vec::with_capacity(vertex.properties.len());
    let mut acc = 0;
    for p in &vertex.properties {
        offsets.push(acc);
        acc += p.ty.size();
    }
    let mut positions = Vec::with_capacity(vertex.count);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(vertex.count));
    for i in 0..vertex.count {
        let rec = &bytes[start + i * record..start + (i + 1) * record];
        let mut pos: Position = [0.0; 3];
        for (axis, &pi) in layout.xyz.iter().enumerate() {
            let ty = vertex.properties[pi].ty;
            let field = &rec[offsets[pi]..];
            pos[axis] = match ty {
                ScalarType::F32 => f32::from_le_bytes(field[..4].try_into().unwrap()),
                _ => read_scalar(field, ty) as f32,
            };
        }
        if !pos.iter().all(|v| v.is_finite()) {
            return Err(Error::ply(
                (start + i * record) as u64,
                "non-finite coordinate",
            ));
        }
        positions.push(pos);
        if let (Some(rgb), Some(colors)) = (layout.rgb, colors.as_mut()) {
            colors.push([rec[offsets[rgb[0]]], rec[offsets[rgb[1]]], rec[offsets[rgb[2]]]]);
        }
    }
    PointCloud::new(positions, colors)
}

fn parse_ascii(
    bytes: &[u8],
    start: usize,
    skip_lines: usize,
    vertex: &Element,
    layout: &VertexLayout,
) -> Result<PointCloud> {
    let mut offset = start;
    let next_line = |offset: &mut usize| -> Option<(usize, &[u8])> {
        while *offset < bytes.len() {
            let rest = &bytes[*offset..];
            let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
            let line_start = *offset;
            *offset += (end + 1).min(rest.len());
            let line = &rest[..end];
            if line.iter().any(|b| !b.is_ascii_whitespace()) {
                return Some((line_start, line));
            }
        }
        None
    };
    for _ in 0..skip_lines {
        if next_line(&mut offset).is_none() {
            return Err(Error::ply(offset as u64, "truncated payload"));
        }
    }
    let mut positions = Vec::with_capacity(vertex.count);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(vertex.count));
    let nprops = vertex.properties.len();
    let mut fields: Vec<&str> = Vec::with_capacity(nprops);
    for i in 0..vertex.count {
        let Some((line_start, line)) = next_line(&mut offset) else {
            return Err(Error::ply(
                bytes.len() as u64,
                format!("truncated payload: {} of {} vertices present", i, vertex.count),
            ));
        };
        let text = std::str::from_utf8(line)
            .map_err(|_| Error::ply(line_start as u64, "vertex line is not valid UTF-8"))?;
        fields.clear();
        fields.extend(text.split_whitespace());
        if fields.len() < nprops {
            return Err(Error::ply(
                line_start as u64,
                format!("vertex {i}: expected {nprops} values, found {}", fields.len()),
            ));
        }
        let mut pos: Position = [0.0; 3];
        for (axis, &pi) in layout.xyz.iter().enumerate() {
            pos[axis] = fields[pi].parse::<f32>().map_err(|_| {
                Error::ply(line_start as u64, format!("vertex {i}: bad coordinate '{}'", fields[pi]))
            })?;
            if !pos[axis].is_finite() {
                return Err(Error::ply(line_start as u64, "non-finite coordinate"));
            }
        }
        positions.push(pos);
        if let (Some(rgb), Some(colors)) = (layout.rgb, colors.as_mut()) {
            let mut c: Color = [0; 3];
            for (ch, &pi) in rgb.iter().enumerate() {
                c[ch] = fields[pi].parse::<u8>().map_err(|_| {
                    Error::ply(line_start as u64, format!("vertex {i}: bad color '{}'", fields[pi]))
                })?;
            }
            colors.push(c);
        }
    }
    PointCloud::new(positions, colors)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    parse_ply(&bytes)
}

/// Serializes a cloud to PLY bytes. Positions are written as `float`.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let colored = cloud.has_colors();
    let per_point = if colored { 15 } else { 12 };
    let mut out = Vec::with_capacity(256 + cloud.len() * per_point);
    let format_name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(
        out,
        "ply\nformat {format_name} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if colored {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.extend_from_slice(b"end_header\n");
    let colors = cloud.colors();
    for (i, p) in cloud.positions().iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
                if let Some(c) = colors {
                    let _ = write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
        }
    }
    out
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    fs::write(path, encode_ply(cloud, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colored_cloud() -> PointCloud {
        PointCloud::new(
            vec![[0.1, 0.2, 0.3], [-1.5, 2.25, 1e-7], [3.0e5, -0.0, 7.75]],
            Some(vec![[255, 0, 0], [0, 128, 0], [1, 2, 3]]),
        )
        .unwrap()
    }

    #[test]
    fn minimal_ascii_xyz() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
        let cloud = parse_ply(text).unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(!cloud.has_colors());
        assert_eq!(cloud.positions()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_cloud_is_valid() {
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = encode_ply(&PointCloud::empty(false), format);
            let text = String::from_utf8_lossy(&bytes);
            assert!(text.contains("element vertex 0"));
            assert_eq!(parse_ply(&bytes).unwrap().len(), 0);
        }
    }

    #[test]
    fn colored_roundtrip_both_formats() {
        let cloud = colored_cloud();
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let back = parse_ply(&encode_ply(&cloud, format)).unwrap();
            assert_eq!(back, cloud);
        }
    }

    #[test]
    fn partial_colors_are_ignored() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nend_header\n1 2 3 200\n";
        let cloud = parse_ply(text).unwrap();
        assert!(!cloud.has_colors());
    }

    #[test]
    fn skips_extra_properties_and_reads_doubles() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty float nx\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        for (i, v) in [[1.5f64, 2.5, 3.5], [-1.0, 0.25, 8.0]].iter().enumerate() {
            bytes.extend_from_slice(&v[0].to_le_bytes());
            bytes.extend_from_slice(&9.0f32.to_le_bytes());
            bytes.extend_from_slice(&v[1].to_le_bytes());
            bytes.extend_from_slice(&v[2].to_le_bytes());
            bytes.extend_from_slice(&[i as u8, 10, 20]);
        }
        let cloud = parse_ply(&bytes).unwrap();
        assert_eq!(cloud.positions(), &[[1.5, 2.5, 3.5], [-1.0, 0.25, 8.0]]);
        assert_eq!(cloud.colors().unwrap()[1], [1, 10, 20]);
    }

    #[test]
    fn skips_faces_after_vertices() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n1 2 3\n";
        assert_eq!(parse_ply(text).unwrap().len(), 1);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let cloud = colored_cloud();
        let bytes = encode_ply(&cloud, PlyFormat::BinaryLittleEndian);
        let cut = &bytes[..bytes.len() - 4];
        match parse_ply(cut) {
            Err(Error::Ply { offset, message }) => {
                let header_len = bytes.len() - 3 * 15;
                assert_eq!(offset as usize, header_len + 2 * 15);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_errors() {
        assert!(matches!(parse_ply(b"plx\n"), Err(Error::Ply { offset: 0, .. })));
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n").is_err());
        let bad_type = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(parse_ply(bad_type), Err(Error::Ply { .. })));
        let big_endian = b"ply\nformat binary_big_endian 1.0\nend_header\n";
        match parse_ply(big_endian) {
            Err(Error::Ply { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_ascii_value_reports_line_offset() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 oops 0\n";
        let header_len = text.len() - "0 0 0\n1 oops 0\n".len();
        match parse_ply(text) {
            Err(Error::Ply { offset, .. }) => assert_eq!(offset as usize, header_len + 6),
            other => panic!("{other:?}"),
        }
    }
}
