//! Minimal heatmap SVG writer.
//!
//! Colors interpolate linearly in RGB from blue (rate 0) to red (rate 1).
//! Empty cells are drawn white with the `empty` class; colored cells carry
//! the `cell` class so tests and scripts can count them.

use std::fmt::Write;

pub const LOW: (u8, u8, u8) = (0x3b, 0x4c, 0xc0);
pub const HIGH: (u8, u8, u8) = (0xb4, 0x04, 0x26);

const CELL: usize = 40;
const MARGIN_LEFT: usize = 70;
const MARGIN_TOP: usize = 40;
const MARGIN_BOTTOM: usize = 60;
const LEGEND_WIDTH: usize = 90;

pub fn color(rate: f64) -> String {
    let t = rate.clamp(0.0, 1.0);
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(LOW.0, HIGH.0), mix(LOW.1, HIGH.1), mix(LOW.2, HIGH.2))
}

/// A grid of optional rates, `values[x][y]`, with y increasing upward.
pub struct Heatmap<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub x_ticks: Vec<String>,
    pub y_ticks: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn render(h: &Heatmap<'_>) -> String {
    let nx = h.values.len();
    let ny = h.values.first().map_or(0, Vec::len);
    let width = MARGIN_LEFT + nx * CELL + LEGEND_WIDTH;
    let height = MARGIN_TOP + ny * CELL + MARGIN_BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<defs><linearGradient id="scale" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        color(0.0),
        color(1.0)
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, width / 2, escape(h.title));
    for (x, column) in h.values.iter().enumerate() {
        for (y, v) in column.iter().enumerate() {
            let px = MARGIN_LEFT + x * CELL;
            let py = MARGIN_TOP + (ny - 1 - y) * CELL;
            match v {
                Some(rate) => {
                    let _ = writeln!(
                        s,
                        r#"<rect class="cell" x="{px}" y="{py}" width="{CELL}" height="{CELL}" fill="{}"><title>{rate:.4}</title></rect>"#,
                        color(*rate)
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect class="empty" x="{px}" y="{py}" width="{CELL}" height="{CELL}" fill="#ffffff" stroke="#dddddd"/>"##
                    );
                }
            }
        }
    }
    let base = MARGIN_TOP + ny * CELL;
    for (x, t) in h.x_ticks.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN_LEFT + x * CELL + CELL / 2, base + 15, escape(t));
    }
    for (y, t) in h.y_ticks.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 5,
            MARGIN_TOP + (ny - 1 - y) * CELL + CELL / 2 + 4,
            escape(t)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN_LEFT + nx * CELL / 2, base + 40, escape(h.x_label));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        MARGIN_TOP + ny * CELL / 2,
        MARGIN_TOP + ny * CELL / 2,
        escape(h.y_label)
    );
    let lx = MARGIN_LEFT + nx * CELL + 25;
    let lh = ny * CELL;
    let _ = writeln!(s, r#"<rect class="legend" x="{lx}" y="{MARGIN_TOP}" width="15" height="{lh}" fill="url(#scale)"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}">1.00</text>"#, lx + 20, MARGIN_TOP + 4);
    let _ = writeln!(s, r#"<text x="{}" y="{}">0.00</text>"#, lx + 20, MARGIN_TOP + lh + 4);
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
