//! Heatmaps of per-bin quantities over time: time runs left to right, the
//! state space bottom to top. Colors are normalized to the run's own
//! largest magnitude.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// White to dark blue over `[0, max]`.
    Sequential,
    /// Blue through white to red over `[-max|v|, max|v|]`.
    Diverging,
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 320.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_B: f64 = 40.0;
const MARGIN_T: f64 = 24.0;

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn color(v: f64, scale: Scale, vmax: f64) -> String {
    let t = if vmax > 0.0 { v / vmax } else { 0.0 };
    let (r, g, b) = match scale {
        Scale::Sequential => {
            let t = t.clamp(0.0, 1.0);
            (lerp(255, 8, t), lerp(255, 48, t), lerp(255, 107, t))
        }
        Scale::Diverging => {
            let t = t.clamp(-1.0, 1.0);
            if t >= 0.0 {
                (lerp(255, 178, t), lerp(255, 24, t), lerp(255, 43, t))
            } else {
                (lerp(255, 33, -t), lerp(255, 102, -t), lerp(255, 172, -t))
            }
        }
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Renders `rows[k][bin]` (one row per time in `times`) as an SVG document.
pub fn heatmap(times: &[f64], omega_min: f64, omega_max: f64, rows: &[&[f64]], scale: Scale, title: &str) -> String {
    let mut s = String::new();
    let width = MARGIN_L + PLOT_W + 16.0;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle">{title}</text>"#, MARGIN_L + PLOT_W / 2.0);
    let n_t = rows.len().min(times.len());
    let n_x = rows.first().map_or(0, |r| r.len());
    if n_t > 0 && n_x > 0 {
        let vmax = rows
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| match scale {
                Scale::Sequential => *v,
                Scale::Diverging => v.abs(),
            })
            .fold(0.0, f64::max);
        let cw = PLOT_W / n_t as f64;
        let ch = PLOT_H / n_x as f64;
        for (k, row) in rows.iter().take(n_t).enumerate() {
            for (b, &v) in row.iter().enumerate() {
                // bin 0 is omega_min, drawn at the bottom
                let x = MARGIN_L + k as f64 * cw;
                let y = MARGIN_T + PLOT_H - (b as f64 + 1.0) * ch;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    cw + 0.3,
                    ch + 0.3,
                    color(v, scale, vmax)
                );
            }
        }
        let (t0, t1) = (times[0], times[n_t - 1]);
        let base = MARGIN_T + PLOT_H;
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(s, r#"<text x="{MARGIN_L}" y="{}" text-anchor="start">t = {t0}</text>"#, base + 16.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">t = {t1}</text>"#,
            MARGIN_L + PLOT_W,
            base + 16.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{base}" text-anchor="end">{omega_min}</text>"#, MARGIN_L - 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{omega_max}</text>"#,
            MARGIN_L - 4.0,
            MARGIN_T + 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">max |value| = {vmax:.4e}</text>"#,
            MARGIN_L + PLOT_W / 2.0,
            base + 32.0
        );
    }
    s.push_str("</svg>\n");
    s
}
