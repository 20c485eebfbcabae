//! ASCII OFF reading and writing (triangles only).

use std::fmt::Write as _;
use std::path::Path;

use super::{MeshError, TriangleMesh};

pub fn read_off(path: impl AsRef<Path>) -> Result<TriangleMesh, MeshError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| MeshError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_off(&text)
}

/// Parses an OFF document. `#` starts a comment; blank lines are skipped. The
/// counts may follow `OFF` on the same line.
pub fn parse_off(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let err = |line: usize, message: &str| MeshError::Parse {
        line,
        message: message.to_string(),
    };

    let (line_no, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("OFF") {
        return Err(err(line_no, "missing OFF header"));
    }
    let mut counts: Vec<&str> = tokens.collect();
    let mut counts_line = line_no;
    if counts.is_empty() {
        let (n, l) = lines.next().ok_or_else(|| err(line_no, "missing counts line"))?;
        counts = l.split_whitespace().collect();
        counts_line = n;
    }
    if counts.len() < 2 {
        return Err(err(counts_line, "counts line needs V F [E]"));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| err(counts_line, &format!("bad count {s:?}")))
    };
    let nv = parse_count(counts[0])?;
    let nf = parse_count(counts[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = lines.next().ok_or_else(|| err(counts_line, "file ends inside vertex list"))?;
        let xyz: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(n, "bad vertex coordinate"))?;
        if xyz.len() != 3 {
            return Err(err(n, "vertex needs three coordinates"));
        }
        vertices.push([xyz[0], xyz[1], xyz[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (n, l) = lines.next().ok_or_else(|| err(counts_line, "file ends inside face list"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(n, "bad face index"))?;
        if idx.first() != Some(&3) || idx.len() < 4 {
            return Err(err(n, "only triangular faces \"3 i j k\" are supported"));
        }
        faces.push([idx[1], idx[2], idx[3]]);
    }
    TriangleMesh::new(vertices, faces)
}

/// Writes vertex positions and faces. Periodic offsets are not representable
/// in OFF and are dropped.
pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    writeln!(out, "OFF").unwrap();
    writeln!(out, "{} {} {}", mesh.num_vertices(), mesh.num_faces(), mesh.num_edges()).unwrap();
    for v in mesh.vertices() {
        writeln!(out, "{} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    out
}
