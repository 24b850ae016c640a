//! Binary little-endian PLY in the de-facto 3DGS export layout.
//!
//! Scales are stored as logs, opacities as logits and colors as degree-0
//! spherical-harmonic coefficients.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::GaussianCloud;
use crate::error::{Error, Result};

/// Degree-0 spherical harmonic normalization constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const OPACITY_EPS: f64 = 1e-6;

const WRITER_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file))
}

pub fn save_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_ply(cloud, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ply<W: Write>(cloud: &GaussianCloud, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for p in WRITER_PROPERTIES {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "end_header")?;
    let mut row = [0f32; WRITER_PROPERTIES.len()];
    for i in 0..cloud.len() {
        let m = cloud.means[i];
        let c = cloud.base_colors[i];
        let s = cloud.scales[i];
        let q = cloud.rotations[i];
        row[0..3].copy_from_slice(&[m[0] as f32, m[1] as f32, m[2] as f32]);
        row[3..6].fill(0.0);
        for k in 0..3 {
            row[6 + k] = ((c[k] - 0.5) / SH_C0) as f32;
            row[10 + k] = s[k].ln() as f32;
        }
        row[9] = logit(cloud.opacities[i]) as f32;
        for k in 0..4 {
            row[13 + k] = q[k] as f32;
        }
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Header {
    count: usize,
    properties: Vec<String>,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let next = |r: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::parse("header", e.to_string()))?;
        Ok(n > 0)
    };
    if !next(r, &mut line)? || line.trim_end() != "ply" {
        return Err(Error::parse("header", "missing 'ply' magic"));
    }
    let mut format_ok = false;
    let mut count = None;
    let mut properties = Vec::new();
    loop {
        if !next(r, &mut line)? {
            return Err(Error::parse("header", "missing end_header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => return Err(Error::parse("format", format!("unsupported format '{other}'"))),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(Error::parse("element vertex", "declared twice"));
                }
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::parse("element vertex", format!("bad count '{n}'")))?,
                );
            }
            ["element", name, ..] => {
                return Err(Error::parse(
                    format!("element {name}"),
                    "only a single 'vertex' element is supported",
                ))
            }
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(Error::parse(format!("property {name}"), "property before element"));
                }
                if *ty != "float" && *ty != "float32" {
                    return Err(Error::parse(
                        format!("property {name}"),
                        format!("unsupported type '{ty}'"),
                    ));
                }
                let known = REQUIRED.contains(name)
                    || matches!(*name, "nx" | "ny" | "nz")
                    || name
                        .strip_prefix("f_rest_")
                        .and_then(|k| k.parse::<usize>().ok())
                        .is_some_and(|k| k < 45);
                if !known {
                    return Err(Error::parse(
                        format!("property {name}"),
                        "unknown property in vertex layout",
                    ));
                }
                if properties.iter().any(|p| p == name) {
                    return Err(Error::parse(format!("property {name}"), "duplicate property"));
                }
                properties.push(name.to_string());
            }
            _ => {
                return Err(Error::parse(
                    "header",
                    format!("unrecognized line '{}'", line.trim_end()),
                ))
            }
        }
    }
    if !format_ok {
        return Err(Error::parse("format", "missing binary_little_endian format line"));
    }
    let count = count.ok_or_else(|| Error::parse("element vertex", "missing vertex element"))?;
    for req in REQUIRED {
        if !properties.iter().any(|p| p == req) {
            return Err(Error::parse(format!("property {req}"), "required property missing"));
        }
    }
    Ok(Header { count, properties })
}

pub fn read_ply<R: Read>(reader: R) -> Result<GaussianCloud> {
    let mut r = BufReader::new(reader);
    let header = parse_header(&mut r)?;
    let stride = header.properties.len();
    let col = |name: &str| header.properties.iter().position(|p| p == name).unwrap();
    let xyz = [col("x"), col("y"), col("z")];
    let dc = [col("f_dc_0"), col("f_dc_1"), col("f_dc_2")];
    let opacity = col("opacity");
    let scale = [col("scale_0"), col("scale_1"), col("scale_2")];
    let rot = [col("rot_0"), col("rot_1"), col("rot_2"), col("rot_3")];

    let n = header.count;
    let mut cloud = GaussianCloud {
        means: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        base_colors: Vec::with_capacity(n),
    };
    let mut bytes = vec![0u8; stride * 4];
    let mut row = vec![0f64; stride];
    for i in 0..n {
        r.read_exact(&mut bytes).map_err(|_| {
            Error::parse(
                "vertex",
                format!("truncated payload: expected {n} vertices, ended at {i}"),
            )
        })?;
        for (v, chunk) in row.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        cloud.means.push(xyz.map(|k| row[k]));
        cloud
            .base_colors
            .push(dc.map(|k| (0.5 + SH_C0 * row[k]).clamp(0.0, 1.0)));
        cloud.opacities.push(sigmoid(row[opacity]));
        cloud.scales.push(scale.map(|k| row[k].exp()));
        let mut q = rot.map(|k| row[k]);
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::parse("vertex", format!("vertex {i}: degenerate rotation")));
        }
        // only renormalize when needed so writer output round-trips bit-exactly
        if (norm - 1.0).abs() > super::QUAT_NORM_TOL {
            q = q.map(|v| v / norm);
        }
        cloud.rotations.push(q);
    }
    cloud.validate().map_err(|e| Error::parse("vertex", e.to_string()))?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth::random_cloud;

    fn to_bytes(cloud: &GaussianCloud) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ply(cloud, &mut buf).unwrap();
        buf
    }

    #[test]
    fn empty_cloud_round_trip() {
        let bytes = to_bytes(&GaussianCloud::default());
        assert!(String::from_utf8_lossy(&bytes).contains("element vertex 0"));
        let back = read_ply(bytes.as_slice()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn single_vertex_dc_and_logit_zero() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for p in REQUIRED {
            buf.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
        buf.extend_from_slice(b"end_header\n");
        let vals: [f32; 14] = [1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = read_ply(buf.as_slice()).unwrap();
        assert_eq!(cloud.base_colors[0], [0.5; 3]);
        assert_eq!(cloud.opacities[0], 0.5);
        assert_eq!(cloud.scales[0], [1.0; 3]);
        assert_eq!(cloud.means[0], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn saturated_opacity_is_stored_as_clamped_logit() {
        let mut cloud = random_cloud(3, 7);
        cloud.opacities[1] = 1.0;
        cloud.opacities[2] = 0.0;
        let back = read_ply(to_bytes(&cloud).as_slice()).unwrap();
        assert!((back.opacities[1] - 1.0).abs() <= 1e-5);
        assert!(back.opacities[2].abs() <= 1e-5);
    }

    #[test]
    fn random_cloud_round_trip_within_tolerance() {
        let cloud = random_cloud(100, 3);
        let bytes = to_bytes(&cloud);
        let back = read_ply(bytes.as_slice()).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1.0);
        for i in 0..100 {
            for k in 0..3 {
                assert!(close(back.means[i][k], cloud.means[i][k]));
                assert!(close(back.scales[i][k], cloud.scales[i][k]));
                assert!(close(back.base_colors[i][k], cloud.base_colors[i][k]));
            }
            for k in 0..4 {
                assert!(close(back.rotations[i][k], cloud.rotations[i][k]));
            }
            assert!(close(back.opacities[i], cloud.opacities[i]));
        }
        // writer output is a fixed point
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn third_party_layout_with_rest_coefficients() {
        let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((0..45).map(|k| format!("f_rest_{k}")));
        names.extend(
            [
                "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        let mut buf = Vec::new();
        buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n");
        for p in &names {
            buf.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
        buf.extend_from_slice(b"end_header\n");
        for i in 0..2 {
            for (k, name) in names.iter().enumerate() {
                let v: f32 = match name.as_str() {
                    "rot_0" => 2.0, // unnormalized, as trained clouds often are
                    "opacity" => 3.0,
                    "scale_0" | "scale_1" | "scale_2" => -2.0,
                    "f_dc_0" => 10.0,
                    _ => (i * 100 + k) as f32 * 1e-3,
                };
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let cloud = read_ply(buf.as_slice()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.base_colors[0][0], 1.0);
        let qn: f64 = cloud.rotations[1].iter().map(|v| v * v).sum();
        assert!((qn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_inputs_name_the_element() {
        let err = read_ply(&b"ply\nformat ascii 1.0\nend_header\n"[..]).unwrap_err();
        assert!(err.to_string().contains("format"));
        let err = read_ply(
            &b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty uchar red\nend_header\n"[..],
        )
        .unwrap_err();
        assert!(err.to_string().contains("red"));
        let mut bytes = to_bytes(&random_cloud(4, 1));
        bytes.truncate(bytes.len() - 10);
        let err = read_ply(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        let err =
            read_ply(&b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n"[..])
                .unwrap_err();
        assert!(err.to_string().contains("property y"));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let err = save_ply(&GaussianCloud::default(), Path::new("/nonexistent-dir/for/sure/x.ply")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
