//! Deterministic top-down rendering.
//!
//! SVG document layout, in element order:
//!
//! 1. `<defs>` with the trajectory gradient (only when a trajectory is drawn)
//! 2. `<rect id="bounds">`
//! 3. `<g id="doorways">`, one `<line>` per doorway, sorted by id
//! 4. `<g id="objects">`, one `<g class="object">` per object sorted by id,
//!    carrying `data-id`, `data-x`, `data-y`, `data-rotation`, `data-extents`,
//!    a `<polygon>` footprint and a `<text>` label
//! 5. `<g id="trajectory">`: a `<polyline>` with one vertex per pose followed by one
//!    `<circle class="pose">` per pose colored along the time gradient
//! 6. `<g id="target">`: a two-line cross
//! 7. `<g id="legend">`: the edit-direction convention
//!
//! World to image: `X = margin + (x - min.x) * scale`, `Y = margin + (max.y - y) * scale`,
//! so "up" on screen is `+y` in the world. All numbers carry two decimals.

use std::fmt::Write as _;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::canon::fmt2;
use crate::geometry::Vec2;
use crate::navigation::Trajectory;
use crate::scene::SceneGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub gradient_start: String,
    pub gradient_end: String,
    pub target_color: String,
    /// SVG pixels per world unit.
    pub scale: f64,
    pub margin: f64,
    /// Raster pixels per world unit.
    pub raster_scale: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            gradient_start: "#FFD700".into(),
            gradient_end: "#FF8C00".into(),
            target_color: "#FF8C00".into(),
            scale: 60.0,
            margin: 40.0,
            raster_scale: 24.0,
        }
    }
}

const LEGEND_HEIGHT: f64 = 56.0;

fn parse_hex(c: &str) -> [u8; 3] {
    let h = c.trim_start_matches('#');
    let v = u32::from_str_radix(h, 16).unwrap_or(0);
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02X}{:02X}{:02X}", c[0], c[1], c[2])
}

/// Color at fraction `t` of the gradient.
pub fn gradient_color(start: &str, end: &str, t: f64) -> [u8; 3] {
    let (a, b) = (parse_hex(start), parse_hex(end));
    let mut out = [0u8; 3];
    for i in 0..3 {
        let v = f64::from(a[i]) + (f64::from(b[i]) - f64::from(a[i])) * t.clamp(0.0, 1.0);
        out[i] = v.round() as u8;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame<'a> {
    scene: &'a SceneGraph,
    cfg: &'a RenderConfig,
}

impl Frame<'_> {
    fn px(&self, p: Vec2) -> (String, String) {
        let b = self.scene.bounds;
        let x = self.cfg.margin + (p.x - b.min.x) * self.cfg.scale;
        let y = self.cfg.margin + (b.max.y - p.y) * self.cfg.scale;
        (fmt2(x), fmt2(y))
    }

    fn pts(&self, ps: &[Vec2]) -> String {
        ps.iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x},{y}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn render_scene(scene: &SceneGraph, traj: Option<&Trajectory>, target: Option<&str>) -> Vec<u8> {
    render_scene_with(scene, traj, target, &RenderConfig::default())
}

pub fn render_scene_with(
    scene: &SceneGraph,
    traj: Option<&Trajectory>,
    target: Option<&str>,
    cfg: &RenderConfig,
) -> Vec<u8> {
    let f = Frame { scene, cfg };
    let b = scene.bounds;
    let w = b.width() * cfg.scale + 2.0 * cfg.margin;
    let h = b.height() * cfg.scale + 2.0 * cfg.margin + LEGEND_HEIGHT;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" data-scene-id=\"{2}\">",
        fmt2(w),
        fmt2(h),
        escape(&scene.scene_id)
    );

    let poses: Vec<Vec2> = traj.map(|t| t.poses.iter().map(|p| p.position).collect()).unwrap_or_default();
    if let (Some(first), Some(last)) = (poses.first(), poses.last()) {
        let (x1, y1) = f.px(*first);
        let (x2, y2) = f.px(*last);
        let _ = writeln!(
            s,
            "  <defs><linearGradient id=\"trajectory-gradient\" gradientUnits=\"userSpaceOnUse\" x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\"><stop offset=\"0\" stop-color=\"{}\"/><stop offset=\"1\" stop-color=\"{}\"/></linearGradient></defs>",
            cfg.gradient_start, cfg.gradient_end
        );
    }

    let (bx, by) = f.px(Vec2::new(b.min.x, b.max.y));
    let _ = writeln!(
        s,
        "  <rect id=\"bounds\" x=\"{bx}\" y=\"{by}\" width=\"{}\" height=\"{}\" fill=\"#FAFAFA\" stroke=\"#333333\" stroke-width=\"4.00\"/>",
        fmt2(b.width() * cfg.scale),
        fmt2(b.height() * cfg.scale)
    );

    s.push_str("  <g id=\"doorways\">\n");
    for d in &scene.doorways {
        let (x1, y1) = f.px(d.segment[0]);
        let (x2, y2) = f.px(d.segment[1]);
        let _ = writeln!(
            s,
            "    <line class=\"doorway\" data-id=\"{}\" x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"#4CAF50\" stroke-width=\"6.00\"/>",
            escape(&d.id)
        );
    }
    s.push_str("  </g>\n");

    s.push_str("  <g id=\"objects\">\n");
    for o in &scene.objects {
        let corners = o.footprint().corners();
        let (lx, ly) = f.px(o.position);
        let fill = if o.movable { "#90A4AE" } else { "#546E7A" };
        let _ = writeln!(
            s,
            "    <g class=\"object\" data-id=\"{id}\" data-category=\"{cat}\" data-x=\"{}\" data-y=\"{}\" data-rotation=\"{}\" data-extents=\"{} {}\"><polygon points=\"{}\" fill=\"{fill}\" stroke=\"#263238\" stroke-width=\"1.50\"/><text x=\"{lx}\" y=\"{ly}\" font-family=\"monospace\" font-size=\"12.00\" text-anchor=\"middle\" dominant-baseline=\"middle\">{id}</text></g>",
            fmt2(o.position.x),
            fmt2(o.position.y),
            fmt2(o.rotation),
            fmt2(o.extents.x),
            fmt2(o.extents.y),
            f.pts(&corners),
            id = escape(&o.id),
            cat = escape(&o.category),
        );
    }
    s.push_str("  </g>\n");

    if !poses.is_empty() {
        s.push_str("  <g id=\"trajectory\">\n");
        let _ = writeln!(
            s,
            "    <polyline points=\"{}\" fill=\"none\" stroke=\"url(#trajectory-gradient)\" stroke-width=\"3.00\"/>",
            f.pts(&poses)
        );
        let n = poses.len();
        for (i, p) in poses.iter().enumerate() {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let (cx, cy) = f.px(*p);
            let _ = writeln!(
                s,
                "    <circle class=\"pose\" cx=\"{cx}\" cy=\"{cy}\" r=\"2.00\" fill=\"{}\"/>",
                hex(gradient_color(&cfg.gradient_start, &cfg.gradient_end, t))
            );
        }
        s.push_str("  </g>\n");
    }

    if let Some(obj) = target.and_then(|id| scene.object(id)) {
        let arm = 0.25;
        let c = obj.position;
        let (ax, ay) = f.px(c + Vec2::new(-arm, -arm));
        let (bx, by) = f.px(c + Vec2::new(arm, arm));
        let (cx, cy) = f.px(c + Vec2::new(-arm, arm));
        let (dx, dy) = f.px(c + Vec2::new(arm, -arm));
        let col = &cfg.target_color;
        let _ = writeln!(
            s,
            "  <g id=\"target\" data-id=\"{}\"><line x1=\"{ax}\" y1=\"{ay}\" x2=\"{bx}\" y2=\"{by}\" stroke=\"{col}\" stroke-width=\"4.00\"/><line x1=\"{cx}\" y1=\"{cy}\" x2=\"{dx}\" y2=\"{dy}\" stroke=\"{col}\" stroke-width=\"4.00\"/></g>",
            escape(&obj.id)
        );
    }

    let ly = b.height() * cfg.scale + 2.0 * cfg.margin + 8.0;
    let lx = cfg.margin;
    let _ = writeln!(
        s,
        "  <g id=\"legend\" font-family=\"monospace\" font-size=\"12.00\"><line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#333333\" stroke-width=\"2.00\"/><line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"#333333\" stroke-width=\"2.00\"/><text x=\"{tx}\" y=\"{ty0}\">right = +x, left = -x</text><text x=\"{tx}\" y=\"{ty1}\">up = +y, down = -y (grid 100x100)</text></g>",
        x0 = fmt2(lx),
        x1 = fmt2(lx + 30.0),
        y0 = fmt2(ly),
        y1 = fmt2(ly + 30.0),
        tx = fmt2(lx + 40.0),
        ty0 = fmt2(ly + 12.0),
        ty1 = fmt2(ly + 30.0),
    );
    s.push_str("</svg>\n");
    s.into_bytes()
}

/// Raster version of the same view as PNG bytes, for image-only backends.
pub fn render_png(scene: &SceneGraph, traj: Option<&Trajectory>, target: Option<&str>, cfg: &RenderConfig) -> Vec<u8> {
    let b = scene.bounds;
    let k = cfg.raster_scale;
    let w = (b.width() * k).ceil() as u32 + 1;
    let h = (b.height() * k).ceil() as u32 + 1;
    let mut img = RgbImage::from_pixel(w, h, Rgb([250, 250, 250]));
    let world = |px: u32, py: u32| Vec2::new(b.min.x + (f64::from(px) + 0.5) / k, b.max.y - (f64::from(py) + 0.5) / k);
    let to_px = |p: Vec2| ((p.x - b.min.x) * k, (b.max.y - p.y) * k);

    let prints: Vec<_> = scene.objects.iter().map(|o| (o.footprint(), o.movable)).collect();
    for py in 0..h {
        for px in 0..w {
            let p = world(px, py);
            if px == 0 || py == 0 || px == w - 1 || py == h - 1 {
                img.put_pixel(px, py, Rgb([51, 51, 51]));
                continue;
            }
            for (fp, movable) in &prints {
                if fp.contains(p) {
                    let c = if *movable { [144, 164, 174] } else { [84, 110, 122] };
                    img.put_pixel(px, py, Rgb(c));
                    break;
                }
            }
        }
    }

    let mut plot = |x: f64, y: f64, c: [u8; 3]| {
        for (ox, oy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            let (xi, yi) = ((x + ox).floor(), (y + oy).floor());
            if xi >= 0.0 && yi >= 0.0 && (xi as u32) < w && (yi as u32) < h {
                img.put_pixel(xi as u32, yi as u32, Rgb(c));
            }
        }
    };

    for d in &scene.doorways {
        let (a, c) = (to_px(d.segment[0]), to_px(d.segment[1]));
        let n = ((c.0 - a.0).hypot(c.1 - a.1).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            plot(a.0 + (c.0 - a.0) * t, a.1 + (c.1 - a.1) * t, [76, 175, 80]);
        }
    }

    if let Some(traj) = traj {
        let n = traj.poses.len();
        for (i, pair) in traj.poses.windows(2).enumerate() {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let col = gradient_color(&cfg.gradient_start, &cfg.gradient_end, t);
            let (a, c) = (to_px(pair[0].position), to_px(pair[1].position));
            let steps = ((c.0 - a.0).hypot(c.1 - a.1).ceil() as usize).max(1);
            for j in 0..=steps {
                let u = j as f64 / steps as f64;
                plot(a.0 + (c.0 - a.0) * u, a.1 + (c.1 - a.1) * u, col);
            }
        }
    }

    if let Some(obj) = target.and_then(|id| scene.object(id)) {
        let col = parse_hex(&cfg.target_color);
        let (cx, cy) = to_px(obj.position);
        let arm = 0.25 * k;
        let steps = (2.0 * arm).ceil() as usize;
        for j in 0..=steps {
            let u = -arm + 2.0 * arm * j as f64 / steps as f64;
            plot(cx + u, cy + u, col);
            plot(cx + u, cy - u, col);
        }
    }

    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}
