//! ASCII PLY import/export. One vertex per primitive with properties
//! `x y z qw qx qy qz sx sy sz opacity c0_r c0_g c0_b`, followed by
//! `c{k}_r c{k}_g c{k}_b` for higher SH coefficients when present.

use std::io::{BufRead, Write};

use super::{GaussianPrimitive, Quat};
use crate::error::{Error, Result};
use crate::mathcore::Vec3;

const BASE_PROPS: [&str; 11] = [
    "x", "y", "z", "qw", "qx", "qy", "qz", "sx", "sy", "sz", "opacity",
];

fn err(message: impl Into<String>) -> Error {
    Error::format("ply", message)
}

pub fn write_ply<W: Write>(primitives: &[GaussianPrimitive], mut w: W) -> Result<()> {
    let coeffs = primitives.iter().map(|g| g.sh.len()).max().unwrap_or(1);
    if primitives.iter().any(|g| g.sh.len() != coeffs) {
        return Err(err("primitives have mixed SH degrees"));
    }
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", primitives.len())?;
    for p in BASE_PROPS {
        writeln!(w, "property double {p}")?;
    }
    for k in 0..coeffs {
        for ch in ["r", "g", "b"] {
            writeln!(w, "property double c{k}_{ch}")?;
        }
    }
    writeln!(w, "end_header")?;
    for g in primitives {
        let q = g.rotation;
        let mut row = vec![
            g.mean[0], g.mean[1], g.mean[2], q.w, q.x, q.y, q.z, g.scale[0], g.scale[1],
            g.scale[2], g.opacity,
        ];
        row.extend(g.sh.iter().flatten());
        let text: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", text.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply<R: BufRead>(r: R) -> Result<Vec<GaussianPrimitive>> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| err("unexpected end of file"))?
            .map_err(Error::from)
    };
    if next()?.trim() != "ply" {
        return Err(err("missing 'ply' magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = next()?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(err(format!("unsupported format '{other}'"))),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| err("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(err(format!("unexpected header line '{line}'"))),
        }
    }
    let count = count.ok_or_else(|| err("no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let base: Vec<usize> = BASE_PROPS
        .iter()
        .map(|p| col(p).ok_or_else(|| err(format!("missing property '{p}'"))))
        .collect::<Result<_>>()?;
    let mut sh_cols = Vec::new();
    while let (Some(r), Some(g), Some(b)) = (
        col(&format!("c{}_r", sh_cols.len())),
        col(&format!("c{}_g", sh_cols.len())),
        col(&format!("c{}_b", sh_cols.len())),
    ) {
        sh_cols.push([r, g, b]);
    }
    if sh_cols.is_empty() {
        return Err(err("missing color properties c0_r c0_g c0_b"));
    }

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let line = next()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(format!("vertex {i}: non-numeric value")))?;
        if vals.len() != props.len() {
            return Err(err(format!(
                "vertex {i}: {} values for {} properties",
                vals.len(),
                props.len()
            )));
        }
        let b = |k: usize| vals[base[k]];
        let g = GaussianPrimitive {
            mean: Vec3::new(b(0), b(1), b(2)),
            rotation: Quat::new(b(3), b(4), b(5), b(6)).normalized(),
            scale: Vec3::new(b(7), b(8), b(9)),
            opacity: b(10),
            sh: sh_cols
                .iter()
                .map(|c| [vals[c[0]], vals[c[1]], vals[c[2]]])
                .collect(),
        };
        g.validate().map_err(|e| err(format!("vertex {i}: {e}")))?;
        out.push(g);
    }
    Ok(out)
}
