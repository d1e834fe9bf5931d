//! Standalone SVG rendering of an episode log.

use std::fmt::Write as _;

use crowdnav_core::eval::{EpisodeLog, Outcome};
use crowdnav_core::Vec2;

const SCALE: f64 = 60.0;
const PAD: f64 = 40.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Frame {
    min: Vec2,
    max: Vec2,
}

impl Frame {
    fn px(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.min.x) * SCALE + PAD, (self.max.y - p.y) * SCALE + PAD)
    }

    fn size(&self) -> (f64, f64) {
        ((self.max.x - self.min.x) * SCALE + 2.0 * PAD, (self.max.y - self.min.y) * SCALE + 2.0 * PAD)
    }
}

fn points(frame: &Frame, path: &[Vec2]) -> String {
    let mut s = String::new();
    for (i, p) in path.iter().enumerate() {
        let (x, y) = frame.px(*p);
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

fn outcome_label(o: &Outcome) -> String {
    match o {
        Outcome::Success => "success".into(),
        Outcome::Collision => "collision".into(),
        Outcome::Timeout => "timeout".into(),
        Outcome::Aborted { reason } => format!("aborted: {}", escape(reason)),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders vehicle and pedestrian paths with numbered discs every
/// `mark_every` steps and time labels on the vehicle path.
pub fn render_svg(log: &EpisodeLog, mark_every: usize) -> String {
    let mark_every = mark_every.max(1);
    let vehicle_path: Vec<Vec2> = std::iter::once(log.initial_vehicle.position)
        .chain(log.steps.iter().map(|s| s.vehicle.position))
        .collect();
    let ped_paths: Vec<Vec<Vec2>> = (0..log.pedestrians.len())
        .map(|i| {
            std::iter::once(log.initial_pedestrians[i].position)
                .chain(log.steps.iter().map(|s| s.pedestrians[i].position))
                .collect()
        })
        .collect();

    let mut min = log.vehicle.goal;
    let mut max = log.vehicle.goal;
    for p in vehicle_path.iter().chain(ped_paths.iter().flatten()) {
        min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
        max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
    }
    let margin = 0.5;
    let frame = Frame { min: min - Vec2::new(margin, margin), max: max + Vec2::new(margin, margin) };
    let (w, h) = frame.size();

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{w:.2}" height="{h:.2}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">seed {} | {} | t = {:.2} s</text>"#,
        log.seed,
        outcome_label(&log.outcome),
        log.time
    );

    let _ = writeln!(svg, r#"<g id="pedestrians">"#);
    for (i, path) in ped_paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let r = log.pedestrians[i].radius * SCALE;
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="4 3"/>"#,
            points(&frame, path)
        );
        for (k, p) in path.iter().enumerate() {
            if k % mark_every != 0 && k + 1 != path.len() {
                continue;
            }
            let (x, y) = frame.px(*p);
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="none" stroke="{color}" stroke-width="1"/>"#
            );
        }
        let (x, y) = frame.px(path[0]);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" fill="{color}">{}</text>"#,
            i + 1
        );
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g id="vehicle">"#);
    let (gx, gy) = frame.px(log.vehicle.goal);
    let _ = writeln!(
        svg,
        r#"<path d="M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}" stroke="black" stroke-width="2"/>"#,
        gx - 6.0,
        gy - 6.0,
        gx + 6.0,
        gy + 6.0,
        gx - 6.0,
        gy + 6.0,
        gx + 6.0,
        gy - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
        points(&frame, &vehicle_path)
    );
    let vr = log.vehicle.radius * SCALE;
    for (k, p) in vehicle_path.iter().enumerate() {
        if k % mark_every != 0 && k + 1 != vehicle_path.len() {
            continue;
        }
        let (x, y) = frame.px(*p);
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{vr:.2}" fill="gold" fill-opacity="0.5" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">{:.1}</text>"#,
            x + vr + 2.0,
            y,
            k as f64 * log.dt
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    svg
}
