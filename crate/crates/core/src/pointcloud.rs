//! Point cloud geometry: the deduplicated voxel set, PLY I/O and voxelization.
//!
//! Points are kept sorted lexicographically by `(x, y, z)`, which is the
//! canonical order used when writing files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [u32; 3];

pub const MAX_BIT_DEPTH: u8 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointCloud {
    points: Vec<Point>,
    bit_depth: u8,
}

/// Smallest bit depth (at least 1) such that `value < 2^depth`.
pub fn depth_for(value: u32) -> u8 {
    (32 - value.leading_zeros()).max(1) as u8
}

impl PointCloud {
    /// Builds a cloud with the minimal bit depth covering every coordinate.
    pub fn from_points(points: impl IntoIterator<Item = Point>) -> Result<Self> {
        let mut points: Vec<Point> = points.into_iter().collect();
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        points.sort_unstable();
        points.dedup();
        let max = points.iter().flat_map(|p| p.iter().copied()).max().unwrap_or(0);
        let bit_depth = depth_for(max);
        if bit_depth > MAX_BIT_DEPTH {
            return Err(Error::domain(format!(
                "coordinate {max} exceeds the {MAX_BIT_DEPTH}-bit grid"
            )));
        }
        Ok(PointCloud { points, bit_depth })
    }

    /// Builds a cloud with an explicit bit depth, which must cover every point.
    pub fn with_depth(points: impl IntoIterator<Item = Point>, bit_depth: u8) -> Result<Self> {
        if !(1..=MAX_BIT_DEPTH).contains(&bit_depth) {
            return Err(Error::param(format!("bit depth {bit_depth} outside [1, 16]")));
        }
        let mut pc = Self::from_points(points)?;
        if pc.bit_depth > bit_depth {
            return Err(Error::domain(format!(
                "points need {} bits but declared depth is {bit_depth}",
                pc.bit_depth
            )));
        }
        pc.bit_depth = bit_depth;
        Ok(pc)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// Componentwise minimum over all points.
    pub fn min_corner(&self) -> Point {
        let mut min = [u32::MAX; 3];
        for p in &self.points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
            }
        }
        min
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::format(format!("unknown PLY scalar type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    declared_depth: Option<u8>,
    body_offset: usize,
}

const DEPTH_COMMENT: &str = "kpcc bit_depth";

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("unterminated PLY header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(|s| s.trim_end_matches('\r'))
            .map_err(|_| Error::format("PLY header is not valid UTF-8"))
    };

    if next_line()?.trim() != "ply" {
        return Err(Error::format("missing `ply` magic line"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut declared_depth = None;
    loop {
        let line = next_line()?;
        let mut words = line.split_whitespace();
        match words.next() {
            None => continue,
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    Some(other) => return Err(Error::format(format!("unsupported PLY format `{other}`"))),
                    None => return Err(Error::format("format line without a format")),
                });
            }
            Some("comment") => {
                let text = line.trim_start()["comment".len()..].trim();
                if let Some(v) = text.strip_prefix(DEPTH_COMMENT) {
                    declared_depth = v.trim().parse::<u8>().ok();
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| Error::format("element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::format(format!("element `{name}` has a bad count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::format("property before any element"))?;
                let ty = words.next().ok_or_else(|| Error::format("property without a type"))?;
                if ty == "list" {
                    let count = Scalar::parse(words.next().unwrap_or(""))?;
                    let item = Scalar::parse(words.next().unwrap_or(""))?;
                    element.props.push(Property::List { count, item });
                } else {
                    let ty = Scalar::parse(ty)?;
                    let name = words.next().ok_or_else(|| Error::format("property without a name"))?;
                    element.props.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::format(format!("unexpected header keyword `{other}`"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::format("PLY header has no format line"))?,
        elements,
        declared_depth,
        body_offset: pos,
    })
}

/// Indices of the x/y/z scalar properties within the vertex element.
fn xyz_slots(vertex: &Element) -> Result<[usize; 3]> {
    let find = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
            .ok_or_else(|| Error::format(format!("vertex element has no `{axis}` property")))
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

fn read_raw_vertices(bytes: &[u8], header: &Header) -> Result<Vec<[f64; 3]>> {
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format("PLY file has no vertex element"))?;
    let slots = xyz_slots(&header.elements[vertex_pos])?;
    let body = &bytes[header.body_offset..];
    let mut out = Vec::with_capacity(header.elements[vertex_pos].count);

    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::format("ASCII body is not UTF-8"))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for (ei, element) in header.elements.iter().enumerate() {
                for _ in 0..element.count {
                    let line = lines
                        .next()
                        .ok_or_else(|| Error::format(format!("truncated `{}` data", element.name)))?;
                    if ei != vertex_pos {
                        continue;
                    }
                    let mut values = Vec::with_capacity(element.props.len());
                    let mut words = line.split_whitespace();
                    for prop in &element.props {
                        match prop {
                            Property::Scalar { .. } => {
                                let w = words
                                    .next()
                                    .ok_or_else(|| Error::format("vertex line has too few values"))?;
                                values.push(
                                    w.parse::<f64>()
                                        .map_err(|_| Error::format(format!("bad vertex value `{w}`")))?,
                                );
                            }
                            Property::List { .. } => {
                                let n = words
                                    .next()
                                    .and_then(|w| w.parse::<usize>().ok())
                                    .ok_or_else(|| Error::format("bad list length"))?;
                                for _ in 0..n {
                                    words.next();
                                }
                                values.push(0.0);
                            }
                        }
                    }
                    out.push([values[slots[0]], values[slots[1]], values[slots[2]]]);
                }
                if ei == vertex_pos {
                    break;
                }
            }
        }
        PlyFormat::BinaryLe => {
            let mut pos = 0usize;
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = body
                    .get(*pos..*pos + n)
                    .ok_or_else(|| Error::format("binary PLY body is truncated"))?;
                *pos += n;
                Ok(s)
            };
            for (ei, element) in header.elements.iter().enumerate() {
                for _ in 0..element.count {
                    let mut xyz = [0.0f64; 3];
                    for (pi, prop) in element.props.iter().enumerate() {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                let v = ty.read_le(take(&mut pos, ty.size())?);
                                if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                    xyz[axis] = v;
                                }
                            }
                            Property::List { count, item } => {
                                let n = count.read_le(take(&mut pos, count.size())?);
                                if !(n >= 0.0) {
                                    return Err(Error::format("negative list length"));
                                }
                                take(&mut pos, n as usize * item.size())?;
                            }
                        }
                    }
                    if ei == vertex_pos {
                        out.push(xyz);
                    }
                }
                if ei == vertex_pos {
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Rounds half toward +infinity.
pub(crate) fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

fn to_voxel(v: f64) -> Result<u32> {
    if v.is_nan() {
        return Err(Error::domain("NaN coordinate"));
    }
    let r = round_half_up(v);
    if r < 0.0 {
        return Err(Error::domain(format!("negative coordinate {v}")));
    }
    if r >= (1u64 << MAX_BIT_DEPTH) as f64 {
        return Err(Error::domain(format!("coordinate {v} exceeds the 16-bit grid")));
    }
    Ok(r as u32)
}

/// Reads an ASCII or binary-little-endian PLY file into a voxel cloud.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    parse_ply(&bytes)
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let raw = read_raw_vertices(bytes, &header)?;
    if raw.is_empty() {
        return Err(Error::EmptyInput("PLY file has zero vertices".into()));
    }
    let mut points = Vec::with_capacity(raw.len());
    for v in raw {
        points.push([to_voxel(v[0])?, to_voxel(v[1])?, to_voxel(v[2])?]);
    }
    let pc = PointCloud::from_points(points)?;
    match header.declared_depth {
        Some(d) if d > pc.bit_depth && d <= MAX_BIT_DEPTH => PointCloud::with_depth(pc.points, d),
        _ => Ok(pc),
    }
}

/// Serializes a cloud as binary-little-endian PLY with `uint` coordinates,
/// points in canonical order.
pub fn ply_bytes(pc: &PointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment {DEPTH_COMMENT} {}\nelement vertex {}\n\
         property uint x\nproperty uint y\nproperty uint z\nend_header\n",
        pc.bit_depth,
        pc.len()
    );
    let mut out = Vec::with_capacity(header.len() + pc.len() * 12);
    out.extend_from_slice(header.as_bytes());
    for p in pc.points() {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn save_ply(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&ply_bytes(pc))?;
    w.flush()?;
    Ok(())
}

/// Scales raw points uniformly so the longest bounding-box axis spans
/// `[0, 2^depth - 1]`, then rounds and deduplicates.
pub fn voxelize(raw_points: &[[f64; 3]], target_depth: u8) -> Result<PointCloud> {
    if raw_points.is_empty() {
        return Err(Error::EmptyInput("no points to voxelize".into()));
    }
    if !(1..=MAX_BIT_DEPTH).contains(&target_depth) {
        return Err(Error::param(format!("target depth {target_depth} outside [1, 16]")));
    }
    if raw_points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite coordinate"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in raw_points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let top = ((1u32 << target_depth) - 1) as f64;
    let scale = if extent > 0.0 { top / extent } else { 0.0 };
    let points = raw_points.iter().map(|p| {
        let mut q = [0u32; 3];
        for a in 0..3 {
            q[a] = round_half_up((p[a] - lo[a]) * scale).clamp(0.0, top) as u32;
        }
        q
    });
    PointCloud::with_depth(points, target_depth)
}
