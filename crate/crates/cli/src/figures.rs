//! Figures as files: maximum-intensity projections (PGM) and the traced
//! polylines over the same frame (SVG).

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use snaketrace::tree::SegmentKind;
use snaketrace::{VesselTree, Volume};

/// In-plane axes (horizontal, vertical) when projecting along `axis`.
fn plane(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Maximum along `axis`, scaled to 0–255 over the volume range.
pub fn mip(vol: &Volume, axis: usize) -> (usize, usize, Vec<u8>) {
    let g = vol.grid();
    let (u, v) = plane(axis);
    let (w, h) = (g.dims[u], g.dims[v]);
    let mut img = vec![f64::NEG_INFINITY; w * h];
    for (idx, val) in vol.voxels().iter().enumerate() {
        let ijk = g.unravel(idx);
        let p = ijk[v] * w + ijk[u];
        img[p] = img[p].max(*val);
    }
    let (lo, hi) = vol.value_range();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let bytes = img
        .iter()
        .map(|x| ((x - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    (w, h, bytes)
}

pub fn write_pgm(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

/// Polylines in voxel-index units of the projection plane, so the SVG lines
/// up with the PGM when overlaid.
pub fn overlay_svg(vol: &Volume, tree: &VesselTree, axis: usize, image_href: &str) -> String {
    let g = vol.grid();
    let (u, v) = plane(axis);
    let (w, h) = (g.dims[u], g.dims[v]);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<image xlink:href="{image_href}" width="{w}" height="{h}"/>"#);
    for (t, kind) in tree.traces.iter().zip(&tree.kinds) {
        let colour = match kind {
            SegmentKind::Traced => "#e4572e",
            SegmentKind::Gap => "#29bf12",
        };
        let pts: Vec<String> = t
            .points
            .iter()
            .map(|p| {
                let x = (p[u] - g.origin[u]) / g.spacing[u];
                let y = (p[v] - g.origin[v]) / g.spacing[v];
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-trace="{}" fill="none" stroke="{colour}" stroke-width="0.8" points="{}"/>"#,
            t.id,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `mip_{x,y,z}.pgm` and `overlay_{x,y,z}.svg` in `dir`; returns the file names.
pub fn write_figures(dir: &Path, vol: &Volume, tree: &VesselTree) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let (w, h, bytes) = mip(vol, axis);
        let pgm = format!("mip_{name}.pgm");
        write_pgm(&dir.join(&pgm), w, h, &bytes)?;
        let svg = format!("overlay_{name}.svg");
        std::fs::write(dir.join(&svg), overlay_svg(vol, tree, axis, &pgm))
            .with_context(|| format!("cannot write {svg}"))?;
        names.push(pgm);
        names.push(svg);
    }
    Ok(names)
}
