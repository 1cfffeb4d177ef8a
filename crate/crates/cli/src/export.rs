//! Top-down SVG drawings and OBJ box meshes of scenes.

use std::fmt::Write;

use hoisynth::geometry::OrientedBox;
use hoisynth::Scene;

/// Pixels per metre.
const SCALE: f64 = 100.0;
const MARGIN: f64 = 0.5;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn bounds(scene: &Scene) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let boxes = scene
        .objects
        .iter()
        .map(|o| o.layout.to_box())
        .chain(scene.humans.iter().map(|h| h.world_box()));
    for b in boxes {
        for c in b.footprint() {
            for k in 0..2 {
                if c[k].is_finite() {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
        }
    }
    if lo[0] > hi[0] || lo[1] > hi[1] {
        return ([-2.0, -2.0], [2.0, 2.0]);
    }
    (
        [(lo[0] - MARGIN).floor(), (lo[1] - MARGIN).floor()],
        [(hi[0] + MARGIN).ceil(), (hi[1] + MARGIN).ceil()],
    )
}

/// Top-down drawing: a 1 m grid, each object as its rotated footprint
/// labelled with its category, each human as a circle with a facing tick.
/// The y axis points up in the drawing.
pub fn export_svg(scene: &Scene) -> String {
    let (lo, hi) = bounds(scene);
    let (w, h) = ((hi[0] - lo[0]) * SCALE, (hi[1] - lo[1]) * SCALE);
    let px = |p: [f64; 2]| ((p[0] - lo[0]) * SCALE, (hi[1] - p[1]) * SCALE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    s.push_str("<g class=\"grid\" stroke=\"#dddddd\" stroke-width=\"1\">\n");
    let mut x = lo[0];
    while x <= hi[0] + 1e-9 {
        let (a, _) = px([x, 0.0]);
        let _ = writeln!(s, r#"<line x1="{a:.2}" y1="0" x2="{a:.2}" y2="{h:.2}"/>"#);
        x += 1.0;
    }
    let mut y = lo[1];
    while y <= hi[1] + 1e-9 {
        let (_, b) = px([0.0, y]);
        let _ = writeln!(s, r#"<line x1="0" y1="{b:.2}" x2="{w:.2}" y2="{b:.2}"/>"#);
        y += 1.0;
    }
    s.push_str("</g>\n");
    for (i, o) in scene.objects.iter().enumerate() {
        let b = o.layout.to_box();
        let pts: Vec<String> = b
            .footprint()
            .iter()
            .map(|&c| {
                let (a, b) = px(c);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let (cx, cy) = px([b.center[0], b.center[1]]);
        let _ = writeln!(
            s,
            r##"<g class="object" data-index="{i}"><polygon points="{}" fill="#c8d7e6" fill-opacity="0.6" stroke="#34495e" stroke-width="2"/><text x="{cx:.2}" y="{cy:.2}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text></g>"##,
            pts.join(" "),
            escape(&o.category)
        );
    }
    for (i, hm) in scene.humans.iter().enumerate() {
        let b: OrientedBox = hm.world_box();
        let (cx, cy) = px([b.center[0], b.center[1]]);
        let r = (b.half_extents[0].min(b.half_extents[1]) * SCALE).max(4.0);
        let fwd = hm.layout.local_to_world([0.0, 0.3, 0.0]);
        let (fx, fy) = px([fwd[0], fwd[1]]);
        let _ = writeln!(
            s,
            r##"<g class="human" data-index="{i}" data-contact="{}"><circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="#e67e22" fill-opacity="0.7" stroke="#a04000" stroke-width="2"/><line x1="{cx:.2}" y1="{cy:.2}" x2="{fx:.2}" y2="{fy:.2}" stroke="#a04000" stroke-width="2"/></g>"##,
            hm.contact_object_index
        );
    }
    s.push_str("</svg>\n");
    s
}

fn push_box(out: &mut String, name: &str, b: &OrientedBox, base: &mut usize) {
    let (z0, z1) = b.z_range();
    let fp = b.footprint();
    let _ = writeln!(out, "o {name}");
    for z in [z0, z1] {
        for c in fp {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", c[0], c[1], z);
        }
    }
    let v = |k: usize| *base + k + 1;
    let faces = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]];
    for f in faces {
        let _ = writeln!(out, "f {} {} {} {}", v(f[0]), v(f[1]), v(f[2]), v(f[3]));
    }
    *base += 8;
}

/// Every object and human footprint as a closed box mesh, z up.
pub fn export_obj(scene: &Scene) -> String {
    let mut out = String::from("# hoisynth scene\n");
    let mut base = 0;
    for (i, o) in scene.objects.iter().enumerate() {
        let name = format!("{}_{i}", o.category.replace(char::is_whitespace, "_"));
        push_box(&mut out, &name, &o.layout.to_box(), &mut base);
    }
    for (i, h) in scene.humans.iter().enumerate() {
        push_box(&mut out, &format!("human_{i}"), &h.world_box(), &mut base);
    }
    out
}
