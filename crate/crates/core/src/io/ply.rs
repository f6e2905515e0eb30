//! Minimal PLY reader and binary writer for point-like elements.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarKind::I8,
            "uchar" | "uint8" => ScalarKind::U8,
            "short" | "int16" => ScalarKind::I16,
            "ushort" | "uint16" => ScalarKind::U16,
            "int" | "int32" => ScalarKind::I32,
            "uint" | "uint32" => ScalarKind::U32,
            "float" | "float32" => ScalarKind::F32,
            "double" | "float64" => ScalarKind::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            ScalarKind::I8 => "char",
            ScalarKind::U8 => "uchar",
            ScalarKind::I16 => "short",
            ScalarKind::U16 => "ushort",
            ScalarKind::I32 => "int",
            ScalarKind::U32 => "uint",
            ScalarKind::F32 => "float",
            ScalarKind::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            ScalarKind::I8 => num!(i8, 1),
            ScalarKind::U8 => num!(u8, 1),
            ScalarKind::I16 => num!(i16, 2),
            ScalarKind::U16 => num!(u16, 2),
            ScalarKind::I32 => num!(i32, 4),
            ScalarKind::U32 => num!(u32, 4),
            ScalarKind::F32 => num!(f32, 4),
            ScalarKind::F64 => num!(f64, 8),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            ScalarKind::I8 => out.extend_from_slice(&(v as i8).to_le_bytes()),
            ScalarKind::U8 => out.extend_from_slice(&(v as u8).to_le_bytes()),
            ScalarKind::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            ScalarKind::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            ScalarKind::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            ScalarKind::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            ScalarKind::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ScalarKind::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Property {
    Scalar(String, ScalarKind),
    /// Lists are parsed but their values are discarded.
    List(String, ScalarKind, ScalarKind),
}

/// One element with its scalar properties stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    pub columns: Vec<(String, ScalarKind, Vec<f64>)>,
}

impl PlyElement {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.0 == name).map(|c| c.2.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub comments: Vec<String>,
    pub elements: Vec<PlyElement>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.name == name)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    Binary { little: bool },
}

struct Header {
    format: Format,
    comments: Vec<String>,
    elements: Vec<(String, usize, Vec<Property>)>,
    data_start: usize,
}

fn malformed(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.into(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let mut pos = 0;
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<(String, usize, Vec<Property>)> = Vec::new();
    let mut first = true;
    loop {
        let start = pos;
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(malformed(path, start, "header is not terminated by end_header"));
        };
        pos += nl + 1;
        let line = std::str::from_utf8(&bytes[start..start + nl])
            .map_err(|_| malformed(path, start, "header is not valid text"))?
            .trim_end_matches('\r');
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or("");
        if first {
            if line != "ply" {
                return Err(malformed(path, start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match key {
            "format" => {
                format = Some(match words.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::Binary { little: true },
                    Some("binary_big_endian") => Format::Binary { little: false },
                    other => return Err(malformed(path, start, format!("unknown format {other:?}"))),
                });
            }
            "comment" | "obj_info" => {
                comments.push(line[key.len()..].trim_start().to_string());
            }
            "element" => {
                let name = words.next().ok_or_else(|| malformed(path, start, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(path, start, "element without a valid count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed(path, start, "property before any element"))?;
                let parts: Vec<&str> = words.collect();
                let prop = match parts.as_slice() {
                    ["list", c, i, name] => match (ScalarKind::parse(c), ScalarKind::parse(i)) {
                        (Some(c), Some(i)) => Property::List(name.to_string(), c, i),
                        _ => return Err(malformed(path, start, "unknown list property type")),
                    },
                    [t, name] => match ScalarKind::parse(t) {
                        Some(k) => Property::Scalar(name.to_string(), k),
                        None => return Err(malformed(path, start, format!("unknown property type '{t}'"))),
                    },
                    _ => return Err(malformed(path, start, "malformed property line")),
                };
                el.2.push(prop);
            }
            "end_header" => break,
            "" => {}
            other => return Err(malformed(path, start, format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| malformed(path, 0, "missing format line"))?;
    Ok(Header {
        format,
        comments,
        elements,
        data_start: pos,
    })
}

/// Parses only the header: comments and element counts.
pub fn read_ply_header(path: &Path) -> Result<PlyData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(&bytes, path)?;
    Ok(PlyData {
        comments: h.comments,
        elements: h
            .elements
            .into_iter()
            .map(|(name, count, _)| PlyElement {
                name,
                count,
                columns: Vec::new(),
            })
            .collect(),
    })
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

fn parse_ply(bytes: &[u8], path: &Path) -> Result<PlyData> {
    let header = parse_header(bytes, path)?;
    let mut out = PlyData {
        comments: header.comments,
        elements: Vec::new(),
    };
    let mut pos = header.data_start;
    let text = match header.format {
        Format::Ascii => Some(
            std::str::from_utf8(&bytes[pos..]).map_err(|_| malformed(path, pos, "ASCII body is not valid text"))?,
        ),
        Format::Binary { .. } => None,
    };
    let mut tokens = text.map(|t| t.split_ascii_whitespace());

    for (name, count, props) in header.elements {
        let mut columns: Vec<(String, ScalarKind, Vec<f64>)> = props
            .iter()
            .filter_map(|p| match p {
                Property::Scalar(n, k) => Some((n.clone(), *k, Vec::with_capacity(count))),
                Property::List(..) => None,
            })
            .collect();
        for row in 0..count {
            let mut col = 0;
            for p in &props {
                match (&header.format, p) {
                    (Format::Ascii, _) => {
                        let toks = tokens.as_mut().expect("ascii tokens");
                        let mut next = || -> Result<f64> {
                            let t = toks
                                .next()
                                .ok_or_else(|| malformed(path, bytes.len(), format!("{name} {row}: unexpected end of data")))?;
                            t.parse()
                                .map_err(|_| malformed(path, pos, format!("{name} {row}: invalid number '{t}'")))
                        };
                        match p {
                            Property::Scalar(..) => {
                                let v = next()?;
                                columns[col].2.push(v);
                                col += 1;
                            }
                            Property::List(..) => {
                                let n = next()? as usize;
                                for _ in 0..n {
                                    next()?;
                                }
                            }
                        }
                    }
                    (Format::Binary { little }, Property::Scalar(_, k)) => {
                        let sz = k.size();
                        if pos + sz > bytes.len() {
                            return Err(malformed(path, bytes.len(), format!("{name} {row}: file is truncated")));
                        }
                        columns[col].2.push(k.decode(&bytes[pos..], *little));
                        pos += sz;
                        col += 1;
                    }
                    (Format::Binary { little }, Property::List(_, c, i)) => {
                        if pos + c.size() > bytes.len() {
                            return Err(malformed(path, bytes.len(), format!("{name} {row}: file is truncated")));
                        }
                        let n = c.decode(&bytes[pos..], *little) as usize;
                        pos += c.size() + n * i.size();
                        if pos > bytes.len() {
                            return Err(malformed(path, bytes.len(), format!("{name} {row}: file is truncated")));
                        }
                    }
                }
            }
        }
        out.elements.push(PlyElement { name, count, columns });
    }
    Ok(out)
}

/// Writes one element as binary little-endian PLY.
pub fn write_ply(path: &Path, comments: &[String], element: &PlyElement) -> Result<()> {
    for (name, _, col) in &element.columns {
        if col.len() != element.count {
            return Err(Error::shape(format!(
                "column '{name}' has {} values, element has {}",
                col.len(),
                element.count
            )));
        }
    }
    let mut out = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        out.push_str(&format!("comment {c}\n"));
    }
    out.push_str(&format!("element {} {}\n", element.name, element.count));
    for (name, kind, _) in &element.columns {
        out.push_str(&format!("property {} {name}\n", kind.name()));
    }
    out.push_str("end_header\n");
    let row_size: usize = element.columns.iter().map(|c| c.1.size()).sum();
    let mut bytes = out.into_bytes();
    bytes.reserve(row_size * element.count);
    for row in 0..element.count {
        for (_, kind, col) in &element.columns {
            kind.encode(col[row], &mut bytes);
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Initial point cloud: positions and optional RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

pub fn read_points(path: &Path) -> Result<PointCloud> {
    let data = read_ply(path)?;
    let v = data
        .element("vertex")
        .ok_or_else(|| Error::data(path, "no 'vertex' element"))?;
    let col = |n: &str| v.column(n).ok_or_else(|| Error::data(path, format!("vertex property '{n}' is missing")));
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let positions: Vec<[f64; 3]> = (0..v.count).map(|i| [x[i], y[i], z[i]]).collect();
    if positions.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::data(path, "vertex positions must be finite"));
    }
    let colors = match (v.column("red"), v.column("green"), v.column("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let kind = v.columns.iter().find(|c| c.0 == "red").map(|c| c.1);
            let scale = if matches!(kind, Some(ScalarKind::F32 | ScalarKind::F64)) { 1.0 } else { 255.0 };
            Some((0..v.count).map(|i| [r[i] / scale, g[i] / scale, b[i] / scale]).collect())
        }
        _ => None,
    };
    Ok(PointCloud { positions, colors })
}

pub fn write_points(path: &Path, points: &PointCloud) -> Result<()> {
    let n = points.positions.len();
    let mut columns = Vec::new();
    for (k, name) in ["x", "y", "z"].iter().enumerate() {
        columns.push((name.to_string(), ScalarKind::F64, points.positions.iter().map(|p| p[k]).collect()));
    }
    if let Some(c) = &points.colors {
        if c.len() != n {
            return Err(Error::shape("colors and positions differ in length"));
        }
        for (k, name) in ["red", "green", "blue"].iter().enumerate() {
            columns.push((
                name.to_string(),
                ScalarKind::U8,
                c.iter().map(|c| (c[k].clamp(0.0, 1.0) * 255.0).round()).collect(),
            ));
        }
    }
    write_ply(
        path,
        &[],
        &PlyElement {
            name: "vertex".into(),
            count: n,
            columns,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_faces() {
        let text = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 1 2 255 0 0\n3 4 5 0 255 51\n3 0 1 1\n";
        let data = parse_ply(text, Path::new("a.ply")).unwrap();
        assert_eq!(data.comments, vec!["hi".to_string()]);
        let v = data.element("vertex").unwrap();
        assert_eq!(v.column("y").unwrap(), &[1.0, 4.0]);
        assert_eq!(data.element("face").unwrap().count, 1);
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.ply");
        let pts = PointCloud {
            positions: vec![[0.1, -2.0, 3.5], [1e-9, 7.0, -0.25], [4.0, 5.0, 6.0]],
            colors: Some(vec![[1.0, 0.0, 0.2], [0.0, 1.0, 0.4], [0.6, 0.8, 1.0]]),
        };
        write_points(&p, &pts).unwrap();
        assert_eq!(read_points(&p).unwrap(), pts);
        assert_eq!(read_ply_header(&p).unwrap().elements[0].count, 3);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_points(&p), Err(Error::Malformed { .. })));
    }

    #[test]
    fn header_errors() {
        let p = Path::new("b.ply");
        assert!(matches!(parse_ply(b"plx\n", p), Err(Error::Malformed { offset: 0, .. })));
        assert!(matches!(
            parse_ply(b"ply\nformat ascii 1.0\nproperty float x\nend_header\n", p),
            Err(Error::Malformed { offset: 21, .. })
        ));
        assert!(parse_ply(b"ply\nformat ascii 1.0\n", p).is_err());
    }
}
