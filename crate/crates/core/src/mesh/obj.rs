//! ASCII OBJ reading and writing (positions and triangular faces only).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{MeshError, TriangleMesh, Vec3};

/// Caller-supplied defaults for data OBJ cannot carry.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub oriented: bool,
    pub vertex_mass: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            oriented: false,
            vertex_mass: 1.0,
        }
    }
}

/// Loads an OBJ file; the mesh is named after the file stem.
pub fn load_obj(path: impl AsRef<Path>, options: &LoadOptions) -> Result<TriangleMesh, MeshError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".to_owned());
    let file = File::open(path)?;
    read_obj(BufReader::new(file), name, options)
}

pub fn read_obj(
    reader: impl Read,
    name: impl Into<String>,
    options: &LoadOptions,
) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                        line: line_no,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| MeshError::Parse {
                        line: line_no,
                        message: format!("invalid coordinate {tok:?}"),
                    })?;
                }
                vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(MeshError::NonTriangularFace {
                        line: line_no,
                        count: refs.len(),
                    });
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let idx_str = r.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str.parse().map_err(|_| MeshError::Parse {
                        line: line_no,
                        message: format!("invalid face index {r:?}"),
                    })?;
                    // 1-based, negative indices count back from the last vertex
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        vertices.len() as i64 + idx
                    };
                    if idx == 0 || resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(MeshError::Parse {
                            line: line_no,
                            message: format!(
                                "face index {idx} out of range ({} vertices)",
                                vertices.len()
                            ),
                        });
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
                face_lines.push(line_no);
            }
            _ => {}
        }
    }

    let mesh = TriangleMesh::new(name, vertices, faces).map_err(|e| match e {
        MeshError::RepeatedIndex { face } => MeshError::Parse {
            line: face_lines[face],
            message: "face repeats a vertex index".into(),
        },
        MeshError::DegenerateFace { face, area } => MeshError::Parse {
            line: face_lines[face],
            message: format!("degenerate face (area {area:e})"),
        },
        other => other,
    })?;
    mesh.with_oriented(options.oriented)
        .with_uniform_mass(options.vertex_mass)
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_obj(&mut out, mesh)?;
    out.flush()?;
    Ok(())
}

pub fn write_obj(out: &mut impl Write, mesh: &TriangleMesh) -> Result<(), MeshError> {
    writeln!(out, "o {}", mesh.name())?;
    for v in mesh.vertices() {
        writeln!(
            out,
            "v {} {} {}",
            format_coord(v.x),
            format_coord(v.y),
            format_coord(v.z)
        )?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Nine significant digits, plain decimal where that stays short.
fn format_coord(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..9).contains(&exp) {
        return sci;
    }
    let decimals = (8 - exp).max(0) as usize;
    // Re-round from the already-rounded mantissa so both branches agree.
    let value: f64 = format!("{mantissa}e{exp}").parse().expect("round trip");
    let mut s = format!("{value:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}
