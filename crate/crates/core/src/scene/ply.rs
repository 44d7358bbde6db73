//! Binary point-attribute (PLY) splat files plus the one-byte-per-Gaussian
//! label sidecar.

use super::{Gaussian, GaussianScene, Label, SceneError};
use crate::geometry::{Quat, Vec3};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Zeroth-order spherical-harmonics basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "f_dc_0", "f_dc_1", "f_dc_2",
];

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn read(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                if little {
                    <$t>::from_le_bytes(a) as f64
                } else {
                    <$t>::from_be_bytes(a) as f64
                }
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

struct Header {
    little: bool,
    count: usize,
    props: Vec<(String, Scalar)>,
    up_axis: Option<Vec3>,
    table_height: Option<f64>,
}

fn malformed(msg: impl Into<String>) -> SceneError {
    SceneError::MalformedSplatFile(msg.into())
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<Header, SceneError> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool, SceneError> {
        line.clear();
        let n = r.read_line(line)?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(malformed("missing 'ply' magic"));
    }
    let mut little = None;
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut up_axis = None;
    let mut table_height = None;
    loop {
        if !next(&mut line)? {
            return Err(malformed("header not terminated by end_header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _ver] => {
                little = Some(match *fmt {
                    "binary_little_endian" => true,
                    "binary_big_endian" => false,
                    other => return Err(malformed(format!("unsupported format {other}"))),
                })
            }
            ["comment", "up_axis", x, y, z] => {
                let p = |s: &str| s.parse::<f64>().map_err(|_| malformed("bad up_axis comment"));
                up_axis = Some(Vec3::new(p(x)?, p(y)?, p(z)?));
            }
            ["comment", "table_height", h] => {
                table_height = Some(h.parse().map_err(|_| malformed("bad table_height comment"))?);
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                if seen_vertex {
                    // trailing elements are ignored; vertex data is read first
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(malformed("first element must be 'vertex'"));
                }
                count = Some(n.parse::<usize>().map_err(|_| malformed("bad vertex count"))?);
                in_vertex = true;
                seen_vertex = true;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(malformed("list properties on vertex are unsupported"))
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| malformed(format!("unknown type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            other => return Err(malformed(format!("unexpected header line {other:?}"))),
        }
    }
    Ok(Header {
        little: little.ok_or_else(|| malformed("missing format line"))?,
        count: count.ok_or_else(|| malformed("missing vertex element"))?,
        props,
        up_axis,
        table_height,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reads a splat file and its label sidecar.
///
/// Opacities already inside `[0, 1]` are taken as linear; otherwise the whole
/// column is treated as logits.
pub fn load_scene(path: &Path, labels_path: &Path) -> Result<GaussianScene, SceneError> {
    if !path.exists() {
        return Err(SceneError::FileNotFound(path.to_path_buf()));
    }
    if !labels_path.exists() {
        return Err(SceneError::FileNotFound(labels_path.to_path_buf()));
    }
    let mut reader = BufReader::new(fs::File::open(path)?);
    let header = parse_header(&mut reader)?;
    let mut col = [usize::MAX; REQUIRED.len()];
    for (k, name) in REQUIRED.iter().enumerate() {
        col[k] = header
            .props
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| malformed(format!("missing required property '{name}'")))?;
    }
    let mut offsets = Vec::with_capacity(header.props.len());
    let mut stride = 0;
    for (_, s) in &header.props {
        offsets.push(stride);
        stride += s.size();
    }
    let mut body = vec![0u8; stride * header.count];
    reader
        .read_exact(&mut body)
        .map_err(|_| malformed(format!("truncated body: expected {} vertices", header.count)))?;

    let mut rows = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let rec = &body[i * stride..(i + 1) * stride];
        let mut v = [0.0f64; REQUIRED.len()];
        for k in 0..REQUIRED.len() {
            let p = col[k];
            v[k] = header.props[p].1.read(&rec[offsets[p]..], header.little);
        }
        rows.push(v);
    }
    let labels = fs::read(labels_path)?;
    if labels.len() != rows.len() {
        return Err(SceneError::LabelLengthMismatch {
            labels: labels.len(),
            gaussians: rows.len(),
        });
    }
    let linear_opacity = rows.iter().all(|r| (0.0..=1.0).contains(&r[10]));
    let mut gaussians = Vec::with_capacity(rows.len());
    for (r, &lb) in rows.iter().zip(&labels) {
        let opacity = if linear_opacity { r[10] } else { sigmoid(r[10]) };
        let color = [
            (r[11] * SH_C0 + 0.5).clamp(0.0, 1.0),
            (r[12] * SH_C0 + 0.5).clamp(0.0, 1.0),
            (r[13] * SH_C0 + 0.5).clamp(0.0, 1.0),
        ];
        gaussians.push(Gaussian {
            mean: Vec3::new(r[0], r[1], r[2]),
            log_scale: Vec3::new(r[3], r[4], r[5]),
            rotation: Quat::new(r[6], r[7], r[8], r[9]),
            opacity,
            color,
            label: Label::from_byte(lb)?,
        });
    }
    let mut scene = GaussianScene::new(gaussians);
    if let Some(up) = header.up_axis {
        scene.up_axis = up;
    }
    scene.table_height = header.table_height;
    Ok(scene)
}

/// Writes a little-endian float32 splat file (linear opacity) plus sidecar.
pub fn save_scene(scene: &GaussianScene, path: &Path, labels_path: &Path) -> Result<(), SceneError> {
    let mut out = Vec::with_capacity(256 + scene.len() * REQUIRED.len() * 4);
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    let up = scene.up_axis;
    writeln!(out, "comment up_axis {} {} {}", up.x, up.y, up.z)?;
    if let Some(h) = scene.table_height {
        writeln!(out, "comment table_height {h}")?;
    }
    writeln!(out, "element vertex {}", scene.len())?;
    for name in REQUIRED {
        writeln!(out, "property float {name}")?;
    }
    writeln!(out, "end_header")?;
    for g in &scene.gaussians {
        let q = g.rotation;
        let vals = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            q.w,
            q.x,
            q.y,
            q.z,
            g.opacity,
            (g.color[0] - 0.5) / SH_C0,
            (g.color[1] - 0.5) / SH_C0,
            (g.color[2] - 0.5) / SH_C0,
        ];
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    let labels: Vec<u8> = scene.gaussians.iter().map(|g| g.label.to_byte()).collect();
    fs::write(labels_path, labels)?;
    Ok(())
}
