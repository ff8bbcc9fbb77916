//! Static SVG scatter of generator samples over the ring's mode centers.

use std::fmt::Write as _;

use fusedprop::train::{RingSpec, TrainConfig};

const SIZE: f64 = 480.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn scatter_svg(
    samples: &[[f64; 2]],
    ring: &RingSpec,
    config: &TrainConfig,
    title: &str,
) -> String {
    let extent = 1.5 * ring.radius;
    let px = |v: f64| (v + extent) / (2.0 * extent) * SIZE;
    let py = |v: f64| SIZE - px(v);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(
        svg,
        "<desc>fusedprop {} config {}</desc>",
        fusedprop::VERSION,
        escape(&serde_json::to_string(config).unwrap_or_default())
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let q = ring.quality_radius() / (2.0 * extent) * SIZE;
    for [cx, cy] in ring.centers() {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{q:.2}" fill="none" stroke="#d62728" stroke-width="1.5"/>"##,
            px(cx),
            py(cy)
        );
    }
    for &[x, y] in samples {
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="#1f77b4" fill-opacity="0.5"/>"##,
            px(x.clamp(-extent, extent)),
            py(y.clamp(-extent, extent))
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="8" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_has_centers_and_samples() {
        let ring = RingSpec::default();
        let svg = scatter_svg(
            &[[0.0, 0.0], [f64::NAN, 1.0]],
            &ring,
            &TrainConfig::default(),
            "a < b",
        );
        assert_eq!(svg.matches("<circle").count(), ring.modes + 1);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.starts_with("<svg"));
    }
}
