//! ASCII PLY reader/writer for point clouds.
//!
//! Vertices need `x`, `y`, `z` scalar properties; an optional `region`
//! scalar carries the [`Region`] code. Other vertex properties and other
//! elements are read past and ignored.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{PointCloud, Region};
use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::Parse { line, message: message.into() }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    read_ply(BufReader::new(File::open(path)?))
}

pub fn read_ply(reader: impl BufRead) -> Result<PointCloud, PlyError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |expect: &str| -> Result<(usize, String), PlyError> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(parse_err(0, format!("unexpected end of file, expected {expect}"))),
        }
    };

    let (n, magic) = next_line("'ply'")?;
    if magic.trim() != "ply" {
        return Err(parse_err(n, "missing 'ply' magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    let header_end = loop {
        let (n, line) = next_line("end_header")?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(n, "only 'format ascii 1.0' is supported"));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(n, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(n, "element without valid count"))?;
                elements.push(Element { name: name.to_string(), count, properties: vec![], has_list: false });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| parse_err(n, "property before any element"))?;
                let words: Vec<&str> = tok.collect();
                match words.as_slice() {
                    ["list", _, _, name] => {
                        el.has_list = true;
                        el.properties.push(name.to_string());
                    }
                    [ty, name] if is_scalar_type(ty) => el.properties.push(name.to_string()),
                    _ => return Err(parse_err(n, format!("malformed property '{line}'"))),
                }
            }
            Some("end_header") => break n,
            Some(other) => return Err(parse_err(n, format!("unexpected header keyword '{other}'"))),
        }
    };
    if !format_seen {
        return Err(parse_err(header_end, "header has no format line"));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(header_end, "no vertex element"))?;
    let vertex = &elements[vertex_pos];
    if vertex.has_list {
        return Err(parse_err(header_end, "list properties on vertices are not supported"));
    }
    let col = |name: &str| vertex.properties.iter().position(|p| p == name);
    let (cx, cy, cz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(header_end, "vertex element lacks x, y, z properties")),
    };
    let cregion = col("region");
    let nprops = vertex.properties.len();

    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            next_line(&format!("{} data", el.name))?;
        }
    }

    let mut points = Vec::with_capacity(vertex.count);
    let mut labels = cregion.map(|_| Vec::with_capacity(vertex.count));
    let mut last_line = header_end;
    for k in 0..vertex.count {
        let (n, line) = match next_line("vertex") {
            Ok(v) => v,
            Err(PlyError::Parse { .. }) => {
                return Err(parse_err(
                    last_line + 1,
                    format!("vertex count mismatch: header declares {}, found {k}", vertex.count),
                ))
            }
            Err(e) => return Err(e),
        };
        last_line = n;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != nprops {
            return Err(parse_err(n, format!("expected {nprops} values, found {}", fields.len())));
        }
        let num = |c: usize| -> Result<f64, PlyError> {
            let v: f64 = fields[c].parse().map_err(|_| parse_err(n, format!("invalid number '{}'", fields[c])))?;
            if !v.is_finite() {
                return Err(parse_err(n, format!("non-finite coordinate '{}'", fields[c])));
            }
            Ok(v)
        };
        points.push(Vec3::new(num(cx)?, num(cy)?, num(cz)?));
        if let (Some(c), Some(l)) = (cregion, labels.as_mut()) {
            let code: u8 = fields[c].parse().map_err(|_| parse_err(n, format!("invalid region '{}'", fields[c])))?;
            l.push(Region::from_code(code).ok_or_else(|| parse_err(n, format!("unknown region code {code}")))?);
        }
    }
    Ok(PointCloud { points, labels })
}

fn is_scalar_type(t: &str) -> bool {
    matches!(
        t,
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "float" | "double" | "int8" | "uint8" | "int16"
            | "uint16" | "int32" | "uint32" | "float32" | "float64"
    )
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Coordinates are written with the shortest decimal form that parses back
/// to the identical `f64`, so `read_ply(write_ply(c)) == c`.
pub fn write_ply(cloud: &PointCloud, mut w: impl Write) -> Result<(), PlyError> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if cloud.has_labels() {
        writeln!(w, "property uchar region")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        match &cloud.labels {
            Some(l) => writeln!(w, "{} {} {} {}", p.x, p.y, p.z, l[i].code())?,
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    Ok(())
}
