//! Cuboid field from its magnetic surface charge, integrated numerically.
//!
//! A box magnetized along +z carries charge density +M on its top face and
//! -M on its bottom face. H(p) = 1/(4π) Σ ∫ σ (p - q) / |p - q|³ dA.

// 8-point Gauss-Legendre on [-1, 1].
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite rule: `panels` equal panels, 8 nodes each, on `[a, b]`.
fn composite(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            GL_X.iter().zip(GL_W).map(move |(x, w)| (mid + 0.5 * h * x, 0.5 * h * w))
        })
        .collect()
}

/// Field of an `l x w x h` box occupying `[0,l]x[0,w]x[0,h]`, magnetization `m` along +z.
pub fn cuboid_field(l: f64, w: f64, h: f64, m: f64, p: [f64; 3], panels: usize) -> [f64; 3] {
    let xs = composite(0.0, l, panels);
    let ys = composite(0.0, w, panels);
    let mut out = [0.0; 3];
    for (zf, sigma) in [(h, m), (0.0, -m)] {
        for &(qx, wx) in &xs {
            for &(qy, wy) in &ys {
                let d = [p[0] - qx, p[1] - qy, p[2] - zf];
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let k = sigma * wx * wy / (r2 * r2.sqrt());
                for i in 0..3 {
                    out[i] += k * d[i];
                }
            }
        }
    }
    out.map(|v| v / (4.0 * std::f64::consts::PI))
}

/// Deterministic exterior points around the box: the point just above the top
/// face center, then points at clearances between `0.1·h` and `2·h` from the body.
pub fn exterior_points(l: f64, w: f64, h: f64, n: usize) -> Vec<[f64; 3]> {
    let mut pts = vec![[0.5 * l, 0.5 * w, 1.1 * h]];
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut unit = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    while pts.len() < n {
        let pad = 2.0 * h;
        let p = [
            -pad + unit() * (l + 2.0 * pad),
            -pad + unit() * (w + 2.0 * pad),
            -pad + unit() * (h + 2.0 * pad),
        ];
        let gap = |v: f64, hi: f64| (-v).max(v - hi).max(0.0);
        let dx = gap(p[0], l);
        let dy = gap(p[1], w);
        let dz = gap(p[2], h);
        let clearance = (dx * dx + dy * dy + dz * dz).sqrt();
        if clearance >= 0.1 * h {
            pts.push(p);
        }
    }
    pts
}
