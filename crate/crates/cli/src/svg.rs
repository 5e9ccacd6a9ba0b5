//! Dependency-free SVG rendering of heatmap matrices.
//!
//! Values are normalized to [0, 1] over the matrix and mapped through a
//! linear dark-blue-to-yellow ramp (viridis-like anchor colors, linearly
//! interpolated). One `<rect>` per matrix cell; rows with larger y render
//! nearer the top so the image matches plot orientation.

use gridalign_core::density::Heatmap;

const RAMP: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [72.0, 40.0, 120.0],
    [62.0, 74.0, 137.0],
    [49.0, 104.0, 142.0],
    [38.0, 130.0, 142.0],
    [31.0, 158.0, 137.0],
    [53.0, 183.0, 121.0],
    [109.0, 205.0, 89.0],
    [253.0, 231.0, 37.0],
];

/// Color of a normalized value, as `#rrggbb`.
pub fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let scaled = t * (RAMP.len() - 1) as f64;
    let lo = (scaled.floor() as usize).min(RAMP.len() - 2);
    let frac = scaled - lo as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let v = RAMP[lo][c] + frac * (RAMP[lo + 1][c] - RAMP[lo][c]);
        rgb[c] = v.round() as u8;
    }
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Render the heatmap, one square block per cell.
pub fn heatmap_svg(hm: &Heatmap) -> String {
    let ny = hm.values.nrows();
    let nx = hm.values.ncols();
    let cell = (600 / nx.max(ny)).clamp(1, 20);
    let width = nx * cell;
    let height = ny * cell;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in hm.values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;

    let mut svg = String::with_capacity(nx * ny * 64);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    for iy in 0..ny {
        for ix in 0..nx {
            let v = hm.values[[iy, ix]];
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            let x = ix * cell;
            let y = (ny - 1 - iy) * cell;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>\n",
                ramp_color(t)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// CSV encoding: first row holds the x coordinates (leading cell empty),
/// each following row starts with its y coordinate.
pub fn heatmap_csv(hm: &Heatmap) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!(
        ",{}\n",
        hm.xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
    ));
    for (iy, row) in hm.values.rows().into_iter().enumerate() {
        out.push_str(&format!("{}", hm.ys[iy]));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}
