//! SVG renderings of the field: player positions and occupancy heatmaps.
//!
//! Document coordinates use 10 units per meter with the origin at the
//! top-left corner of the field, so world `(x, y)` maps to
//! `(10·x, 10·(W − y))` where `W` is the field width.

use std::fmt::Write as _;

use thiserror::Error;

use crate::analytics::HeatmapGrid;
use crate::field::{FieldTemplate, Marking, WorldPoint};

pub const UNITS_PER_METER: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("invalid style: {0}")]
    Style(String),
    #[error("heatmap grid {nx}x{ny} does not cover the field")]
    GridMismatch { nx: usize, ny: usize },
}

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    pub team_colors: [Rgb; 2],
    pub unlabeled_color: Rgb,
    pub marker_radius_m: f64,
    pub line_color: Rgb,
    pub line_width_m: f64,
    pub background: Rgb,
    /// Color stops from cold to hot, evenly spaced.
    pub heatmap_ramp: Vec<Rgb>,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            team_colors: [[30, 60, 200], [220, 40, 40]],
            unlabeled_color: [160, 160, 160],
            marker_radius_m: 0.8,
            line_color: [255, 255, 255],
            line_width_m: 0.12,
            background: [46, 125, 50],
            heatmap_ramp: vec![[255, 255, 178], [254, 178, 76], [240, 59, 32], [128, 0, 38]],
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.marker_radius_m > 0.0 && self.marker_radius_m.is_finite()) {
            return Err(RenderError::Style(format!("marker radius {} must be positive", self.marker_radius_m)));
        }
        if !(self.line_width_m > 0.0 && self.line_width_m.is_finite()) {
            return Err(RenderError::Style(format!("line width {} must be positive", self.line_width_m)));
        }
        if self.heatmap_ramp.is_empty() {
            return Err(RenderError::Style("heatmap ramp needs at least one color".into()));
        }
        Ok(())
    }

    /// Ramp color at `t` in [0, 1].
    pub fn ramp(&self, t: f64) -> Rgb {
        let stops = &self.heatmap_ramp;
        if stops.len() == 1 {
            return stops[0];
        }
        let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
        let i = (t.floor() as usize).min(stops.len() - 2);
        let f = t - i as f64;
        let mut out = [0u8; 3];
        for c in 0..3 {
            let a = stops[i][c] as f64;
            let b = stops[i + 1][c] as f64;
            out[c] = (a + (b - a) * f).round() as u8;
        }
        out
    }
}

fn hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// World meters to document units.
pub fn to_document(template: &FieldTemplate, p: &WorldPoint) -> (f64, f64) {
    (UNITS_PER_METER * p.x, UNITS_PER_METER * (template.width_m() - p.y))
}

struct Doc {
    buf: String,
}

impl Doc {
    fn open(template: &FieldTemplate, style: &RenderStyle) -> Self {
        let w = UNITS_PER_METER * template.length_m();
        let h = UNITS_PER_METER * template.width_m();
        let mut buf = String::new();
        writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        )
        .unwrap();
        writeln!(buf, r#"<rect class="background" x="0" y="0" width="{w}" height="{h}" fill="{}"/>"#, hex(style.background)).unwrap();
        Self { buf }
    }

    fn markings(&mut self, template: &FieldTemplate, style: &RenderStyle) {
        let stroke = hex(style.line_color);
        let sw = UNITS_PER_METER * style.line_width_m;
        writeln!(self.buf, r#"<g class="markings" fill="none" stroke="{stroke}" stroke-width="{sw}">"#).unwrap();
        for m in template.markings() {
            match *m {
                Marking::Segment { a, b } => {
                    let (x1, y1) = to_document(template, &a);
                    let (x2, y2) = to_document(template, &b);
                    writeln!(self.buf, r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>"#).unwrap();
                }
                Marking::Arc {
                    center,
                    radius,
                    start_rad,
                    end_rad,
                } => {
                    let span = end_rad - start_rad;
                    let (cx, cy) = to_document(template, &center);
                    let r = UNITS_PER_METER * radius;
                    if span >= std::f64::consts::TAU - 1e-9 {
                        writeln!(self.buf, r#"<circle cx="{cx}" cy="{cy}" r="{r}"/>"#).unwrap();
                        continue;
                    }
                    let at = |a: f64| to_document(template, &WorldPoint::new(center.x + radius * a.cos(), center.y + radius * a.sin()));
                    let (sx, sy) = at(start_rad);
                    let (ex, ey) = at(end_rad);
                    let large = u8::from(span > std::f64::consts::PI);
                    // counter-clockwise in world is counter-clockwise on
                    // screen after the y flip, which SVG calls sweep 0
                    writeln!(self.buf, r#"<path d="M {sx} {sy} A {r} {r} 0 {large} 0 {ex} {ey}"/>"#).unwrap();
                }
                Marking::Spot { center } => {
                    let (cx, cy) = to_document(template, &center);
                    writeln!(self.buf, r#"<circle cx="{cx}" cy="{cy}" r="{}" fill="{stroke}" stroke="none"/>"#, 2.0 * sw).unwrap();
                }
            }
        }
        self.buf.push_str("</g>\n");
    }

    fn close(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

/// One marker per position, colored by team; `None` uses the unlabeled color.
pub fn render_frame(template: &FieldTemplate, positions: &[(WorldPoint, Option<u8>)], style: &RenderStyle) -> Result<String, RenderError> {
    style.validate()?;
    let mut doc = Doc::open(template, style);
    doc.markings(template, style);
    let r = UNITS_PER_METER * style.marker_radius_m;
    doc.buf.push_str("<g class=\"players\">\n");
    for (p, team) in positions {
        let (cx, cy) = to_document(template, p);
        let (class, color) = match team {
            Some(t @ (0 | 1)) => (format!("team{t}"), style.team_colors[*t as usize]),
            _ => ("unlabeled".to_string(), style.unlabeled_color),
        };
        writeln!(doc.buf, r#"<circle class="player {class}" cx="{cx}" cy="{cy}" r="{r}" fill="{}"/>"#, hex(color)).unwrap();
    }
    doc.buf.push_str("</g>\n");
    Ok(doc.close())
}

/// Filled cell per nonzero count, colored by count relative to the maximum,
/// with the field markings drawn on top.
pub fn render_heatmap(template: &FieldTemplate, grid: &HeatmapGrid, style: &RenderStyle) -> Result<String, RenderError> {
    style.validate()?;
    let c = grid.cell_size_m;
    let covers = grid.counts.len() == grid.nx * grid.ny
        && grid.nx as f64 * c >= template.length_m() - 1e-9
        && grid.ny as f64 * c >= template.width_m() - 1e-9;
    if !covers {
        return Err(RenderError::GridMismatch { nx: grid.nx, ny: grid.ny });
    }
    let max = grid.counts.iter().copied().fold(0.0, f64::max);
    let mut doc = Doc::open(template, style);
    doc.buf.push_str("<g class=\"heatmap\">\n");
    if max > 0.0 {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let v = grid.get(ix, iy);
                if v <= 0.0 {
                    continue;
                }
                // clip border cells to the field rectangle
                let x0 = ix as f64 * c;
                let y0 = iy as f64 * c;
                let x1 = (x0 + c).min(template.length_m());
                let y1 = (y0 + c).min(template.width_m());
                let (dx, dy) = to_document(template, &WorldPoint::new(x0, y1));
                let w = UNITS_PER_METER * (x1 - x0);
                let h = UNITS_PER_METER * (y1 - y0);
                writeln!(
                    doc.buf,
                    r#"<rect class="cell" data-ix="{ix}" data-iy="{iy}" x="{dx}" y="{dy}" width="{w}" height="{h}" fill="{}"/>"#,
                    hex(style.ramp(v / max))
                )
                .unwrap();
            }
        }
    }
    doc.buf.push_str("</g>\n");
    doc.markings(template, style);
    Ok(doc.close())
}

/// File name for a frame render.
pub fn frame_file_name(frame_idx: u64) -> String {
    format!("frame_{frame_idx:06}.svg")
}
