//! Ready-made scenes used by the CLI and the test suites.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoxSpec, CameraSpec, FloorSpec, SceneSpec};

pub const PRESETS: [&str; 7] = [
    "keyboards",
    "washer-heart",
    "apartment",
    "two-bedroom",
    "three-region",
    "large",
    "empty",
];

pub fn by_name(name: &str, seed: u64) -> Option<SceneSpec> {
    Some(match name {
        "keyboards" => keyboards(seed),
        "washer-heart" => washer_heart(seed),
        "apartment" => apartment(seed),
        "two-bedroom" => two_bedroom(seed, 0.05),
        "three-region" => three_region(seed),
        "large" => large(seed, 256),
        "empty" => empty(seed),
        _ => return None,
    })
}

fn base(seed: u64, height: usize, width: usize, hfov_deg: f64) -> SceneSpec {
    SceneSpec {
        seed,
        height,
        width,
        dim: 64,
        hfov_deg,
        embedding_noise: 0.05,
        submap_size: 16,
        region_context: 0.0,
        floors: Vec::new(),
        boxes: Vec::new(),
        cameras: Vec::new(),
        extra_concepts: vec!["giraffe".into(), "piano".into()],
    }
}

pub fn floor(label: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> FloorSpec {
    FloorSpec {
        label: label.into(),
        z: 0.0,
        polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
    }
}

pub fn solid(label: &str, center: [f64; 3], half_extents: [f64; 3]) -> BoxSpec {
    BoxSpec {
        label: label.into(),
        center,
        half_extents,
        yaw_deg: 0.0,
        groups: Vec::new(),
    }
}

fn camera(eye: [f64; 3], target: [f64; 3]) -> CameraSpec {
    CameraSpec { eye, target }
}

const WALL_HALF_THICKNESS: f64 = 0.05;
const WALL_HALF_HEIGHT: f64 = 1.2;

/// Axis-aligned wall from `(x0, y0)` to `(x1, y1)`, with optional door gaps
/// given as `(center, width)` along the wall.
pub fn wall(x0: f64, y0: f64, x1: f64, y1: f64, doors: &[(f64, f64)]) -> Vec<BoxSpec> {
    let horizontal = (y1 - y0).abs() < 1e-12;
    let (a, b) = if horizontal { (x0.min(x1), x0.max(x1)) } else { (y0.min(y1), y0.max(y1)) };
    let mut cuts = vec![a];
    let mut sorted = doors.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    for (c, w) in sorted {
        cuts.push(c - w / 2.0);
        cuts.push(c + w / 2.0);
    }
    cuts.push(b);
    cuts.chunks(2)
        .filter(|s| s[1] - s[0] > 1e-9)
        .map(|s| {
            let mid = (s[0] + s[1]) / 2.0;
            let half = (s[1] - s[0]) / 2.0 + WALL_HALF_THICKNESS;
            if horizontal {
                solid("wall", [mid, y0, WALL_HALF_HEIGHT], [half, WALL_HALF_THICKNESS, WALL_HALF_HEIGHT])
            } else {
                solid("wall", [x0, mid, WALL_HALF_HEIGHT], [WALL_HALF_THICKNESS, half, WALL_HALF_HEIGHT])
            }
        })
        .collect()
}

/// `n` views from around a rectangle's interior, each looking down across
/// the room toward the opposite side.
pub fn room_views(x0: f64, y0: f64, x1: f64, y1: f64, n: usize, height: f64, phase: f64) -> Vec<CameraSpec> {
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (hx, hy) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
    (0..n)
        .map(|k| {
            let t = phase + 2.0 * PI * k as f64 / n as f64;
            let (s, c) = t.sin_cos();
            let r = if k % 2 == 0 { 0.55 } else { 0.3 };
            camera(
                [cx + r * hx * c, cy + r * hy * s, height],
                [cx - 0.5 * hx * c, cy - 0.5 * hy * s, 0.0],
            )
        })
        .collect()
}

/// `n` views from random standpoints inside a rectangle, each aimed at a random
/// floor point of the same rectangle at least 1.5 m away.
pub fn scattered_views(x0: f64, y0: f64, x1: f64, y1: f64, n: usize, seed: u64) -> Vec<CameraSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mx, my) = (0.15 * (x1 - x0), 0.15 * (y1 - y0));
    (0..n)
        .map(|_| {
            let eye = [rng.random_range(x0 + mx..x1 - mx), rng.random_range(y0 + my..y1 - my), rng.random_range(1.2..1.6)];
            let target = loop {
                let t = [rng.random_range(x0 + 0.2..x1 - 0.2), rng.random_range(y0 + 0.2..y1 - 0.2), 0.0];
                if (t[0] - eye[0]).hypot(t[1] - eye[1]) >= 1.5 {
                    break t;
                }
            };
            camera(eye, target)
        })
        .collect()
}

fn enclose(spec: &mut SceneSpec, x0: f64, y0: f64, x1: f64, y1: f64) {
    spec.boxes.extend(wall(x0, y0, x1, y0, &[]));
    spec.boxes.extend(wall(x0, y1, x1, y1, &[]));
    spec.boxes.extend(wall(x0, y0, x0, y1, &[]));
    spec.boxes.extend(wall(x1, y0, x1, y1, &[]));
}

/// Single camera over an empty void.
pub fn empty(seed: u64) -> SceneSpec {
    let mut s = base(seed, 16, 16, 60.0);
    s.cameras.push(camera([0.0, 0.0, 1.0], [1.0, 0.0, 1.0]));
    s
}

/// Office with five keyboards on one desk, all visible from the main desk view.
pub fn keyboards(seed: u64) -> SceneSpec {
    let mut s = base(seed, 120, 160, 70.0);
    s.floors.push(floor("office", -3.0, -3.0, 3.0, 3.0));
    enclose(&mut s, -3.0, -3.0, 3.0, 3.0);
    s.boxes.push(solid("desk", [0.0, 0.6, 0.375], [1.0, 0.45, 0.375]));
    for k in 0..5 {
        let x = -0.68 + 0.34 * k as f64;
        s.boxes.push(solid("keyboard", [x, 0.4, 0.79], [0.14, 0.09, 0.04]));
    }
    s.boxes.push(solid("monitor", [-0.45, 0.95, 1.0], [0.25, 0.03, 0.2]));
    s.boxes.push(solid("monitor", [0.45, 0.95, 1.0], [0.25, 0.03, 0.2]));
    s.boxes.push(solid("cabinet", [-2.4, -2.4, 0.5], [0.4, 0.4, 0.5]));
    s.boxes.push(solid("chair", [2.0, -1.5, 0.25], [0.25, 0.25, 0.25]));
    s.cameras.push(camera([-0.4, -0.35, 1.75], [0.0, 0.4, 0.75]));
    s.cameras.push(camera([0.4, -0.35, 1.75], [0.0, 0.4, 0.75]));
    s.cameras.extend(room_views(-3.0, -3.0, 3.0, 1.0, 6, 1.5, 0.0).into_iter().filter(|c| c.target[1] < c.eye[1]));
    s.cameras.push(camera([1.0, 0.0, 1.5], [2.2, -1.8, 0.0]));
    s.cameras.push(camera([-1.0, 0.0, 1.5], [-2.2, -2.2, 0.0]));
    s
}

const HEART_ROWS: [&str; 7] = [
    ".XX...XX.",
    "XXXX.XXXX",
    "XXXXXXXXX",
    "XXXXXXXXX",
    ".XXXXXXX.",
    "..XXXXX..",
    "...XXX...",
];

/// Forty-five washer centers on a square grid filling a heart, centered at the origin.
pub fn heart_points(spacing: f64) -> Vec<[f64; 2]> {
    let rows = HEART_ROWS.len() as f64;
    let cols = HEART_ROWS[0].len() as f64;
    let mut out = Vec::new();
    for (r, row) in HEART_ROWS.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            if ch == 'X' {
                let x = (c as f64 - (cols - 1.0) / 2.0) * spacing;
                let y = ((rows - 1.0) / 2.0 - r as f64) * spacing;
                out.push([x, y]);
            }
        }
    }
    out
}

/// Forty-five washers laid out as a heart on a workshop floor.
pub fn washer_heart(seed: u64) -> SceneSpec {
    let mut s = base(seed, 160, 160, 75.0);
    s.floors.push(floor("workshop", -3.0, -3.0, 3.0, 3.0));
    enclose(&mut s, -3.0, -3.0, 3.0, 3.0);
    for [x, y] in heart_points(0.15) {
        let mut b = solid("washer", [x, y, 0.02], [0.065, 0.065, 0.02]);
        b.groups.push("heart".into());
        s.boxes.push(b);
    }
    s.boxes.push(solid("bench", [2.3, 0.0, 0.45], [0.4, 1.2, 0.45]));
    s.cameras.push(camera([0.0, -0.4, 1.05], [0.0, -0.03, 0.0]));
    s.cameras.push(camera([0.0, 0.0, 1.6], [2.5, 0.0, 0.3]));
    s.cameras.push(camera([0.0, 0.5, 1.6], [-2.5, 2.5, 0.0]));
    s.cameras.push(camera([0.0, -0.5, 1.6], [-2.5, -2.5, 0.0]));
    s
}

/// Two rooms joined by a corridor; a table with legs stands in the first room.
pub fn apartment(seed: u64) -> SceneSpec {
    let mut s = base(seed, 64, 64, 90.0);
    s.floors.push(floor("living room", 0.0, 0.0, 4.0, 4.0));
    s.floors.push(floor("corridor", 4.0, 1.4, 7.0, 2.6));
    s.floors.push(floor("bedroom", 7.0, 0.0, 11.0, 4.0));
    s.boxes.extend(wall(0.0, 0.0, 4.0, 0.0, &[]));
    s.boxes.extend(wall(0.0, 4.0, 4.0, 4.0, &[]));
    s.boxes.extend(wall(0.0, 0.0, 0.0, 4.0, &[]));
    s.boxes.extend(wall(4.0, 0.0, 4.0, 4.0, &[(2.0, 1.0)]));
    s.boxes.extend(wall(4.0, 1.4, 7.0, 1.4, &[]));
    s.boxes.extend(wall(4.0, 2.6, 7.0, 2.6, &[]));
    s.boxes.extend(wall(7.0, 0.0, 7.0, 4.0, &[(2.0, 1.0)]));
    s.boxes.extend(wall(7.0, 0.0, 11.0, 0.0, &[]));
    s.boxes.extend(wall(7.0, 4.0, 11.0, 4.0, &[]));
    s.boxes.extend(wall(11.0, 0.0, 11.0, 4.0, &[]));
    s.boxes.extend(table([1.8, 2.4]));
    s.boxes.push(solid("bed", [9.5, 2.9, 0.25], [1.0, 0.7, 0.25]));
    s.cameras.extend(room_views(0.0, 0.0, 4.0, 4.0, 16, 1.4, 0.3));
    let corridor: Vec<CameraSpec> = (0..8)
        .map(|k| {
            let x = 3.0 + 0.6 * k as f64;
            camera([x, 2.0, 1.4], [x + 2.0, 2.0 + 0.3 * (k as f64 - 3.5) / 3.5, 0.0])
        })
        .collect();
    s.cameras.extend(corridor);
    s.cameras.extend(room_views(7.0, 0.0, 11.0, 4.0, 24, 1.4, 0.1));
    s
}

/// Tabletop on four legs, grouped as "table", centered at `(x, y)`.
pub fn table(at: [f64; 2]) -> Vec<BoxSpec> {
    let [x, y] = at;
    let mut parts = vec![solid("tabletop", [x, y, 0.73], [0.6, 0.4, 0.02])];
    for (dx, dy) in [(-0.55, -0.35), (0.55, -0.35), (-0.55, 0.35), (0.55, 0.35)] {
        parts.push(solid("table leg", [x + dx, y + dy, 0.355], [0.03, 0.03, 0.355]));
    }
    for p in &mut parts {
        p.groups.push("table".into());
    }
    parts
}

/// West and east bedrooms on either side of a hallway, with a kitchen to the north.
pub fn two_bedroom(seed: u64, embedding_noise: f64) -> SceneSpec {
    let mut s = base(seed, 64, 64, 90.0);
    s.embedding_noise = embedding_noise;
    s.region_context = 0.0;
    s.floors.push(floor("bedroom", 0.0, 0.0, 4.0, 4.0));
    s.floors.push(floor("hallway", 4.0, 0.0, 7.0, 4.0));
    s.floors.push(floor("bedroom", 7.0, 0.0, 11.0, 4.0));
    s.floors.push(floor("kitchen", 4.0, 4.0, 7.0, 8.0));
    s.boxes.extend(wall(0.0, 0.0, 11.0, 0.0, &[]));
    s.boxes.extend(wall(0.0, 4.0, 4.0, 4.0, &[]));
    s.boxes.extend(wall(7.0, 4.0, 11.0, 4.0, &[]));
    s.boxes.extend(wall(4.0, 4.0, 7.0, 4.0, &[(5.5, 0.8)]));
    s.boxes.extend(wall(0.0, 0.0, 0.0, 4.0, &[]));
    s.boxes.extend(wall(11.0, 0.0, 11.0, 4.0, &[]));
    s.boxes.extend(wall(4.0, 0.0, 4.0, 4.0, &[(2.0, 0.8)]));
    s.boxes.extend(wall(7.0, 0.0, 7.0, 4.0, &[(2.0, 0.8)]));
    s.boxes.extend(wall(4.0, 8.0, 7.0, 8.0, &[]));
    s.boxes.extend(wall(4.0, 4.0, 4.0, 8.0, &[]));
    s.boxes.extend(wall(7.0, 4.0, 7.0, 8.0, &[]));
    s.boxes.push(solid("bed", [1.0, 2.8, 0.25], [0.8, 1.0, 0.25]));
    s.boxes.push(solid("bed", [10.0, 2.8, 0.25], [0.8, 1.0, 0.25]));
    s.boxes.push(solid("counter", [5.5, 7.6, 0.45], [1.2, 0.3, 0.45]));
    s.cameras.extend(scattered_views(0.0, 0.0, 4.0, 4.0, 32, seed));
    s.cameras.extend(scattered_views(4.0, 0.0, 7.0, 4.0, 32, seed + 1));
    s.cameras.extend(scattered_views(7.0, 0.0, 11.0, 4.0, 32, seed + 2));
    s.cameras.extend(scattered_views(4.0, 4.0, 7.0, 8.0, 32, seed + 3));
    s
}

/// Kitchen, living room and bedroom in a row, joined by doors.
pub fn three_region(seed: u64) -> SceneSpec {
    let mut s = base(seed, 64, 64, 90.0);
    let rooms = [("kitchen", 0.0, 4.0), ("living room", 4.0, 9.0), ("bedroom", 9.0, 13.0)];
    for (label, x0, x1) in rooms {
        s.floors.push(floor(label, x0, 0.0, x1, 4.0));
    }
    s.boxes.extend(wall(0.0, 0.0, 13.0, 0.0, &[]));
    s.boxes.extend(wall(0.0, 4.0, 13.0, 4.0, &[]));
    s.boxes.extend(wall(0.0, 0.0, 0.0, 4.0, &[]));
    s.boxes.extend(wall(13.0, 0.0, 13.0, 4.0, &[]));
    s.boxes.extend(wall(4.0, 0.0, 4.0, 4.0, &[(2.0, 1.0)]));
    s.boxes.extend(wall(9.0, 0.0, 9.0, 4.0, &[(2.0, 1.0)]));
    s.boxes.push(solid("counter", [2.0, 3.6, 0.45], [1.5, 0.3, 0.45]));
    s.boxes.push(solid("sofa", [6.5, 3.4, 0.4], [1.2, 0.4, 0.4]));
    s.boxes.push(solid("bed", [11.0, 2.8, 0.25], [0.8, 1.0, 0.25]));
    for (i, (_, x0, x1)) in rooms.iter().enumerate() {
        s.cameras.extend(room_views(*x0, 0.0, *x1, 4.0, 16, 1.4, 0.3 * i as f64));
    }
    s
}

/// Grid of rooms with doors between neighbors, sixteen views per room,
/// `keyframes` views in total (rounded down to whole rooms).
pub fn large(seed: u64, keyframes: usize) -> SceneSpec {
    let mut s = base(seed, 64, 64, 90.0);
    let labels = ["bedroom", "kitchen", "living room", "office", "bathroom"];
    let rooms = (keyframes / 16).max(1);
    let cols = (rooms as f64).sqrt().ceil() as usize;
    let size = 4.0;
    for r in 0..rooms {
        let (i, j) = ((r % cols) as f64, (r / cols) as f64);
        let (x0, y0) = (i * size, j * size);
        s.floors.push(floor(labels[r % labels.len()], x0, y0, x0 + size, y0 + size));
        s.boxes.extend(wall(x0, y0, x0 + size, y0, &[(x0 + size / 2.0, 1.0)]));
        s.boxes.extend(wall(x0, y0, x0, y0 + size, &[(y0 + size / 2.0, 1.0)]));
        s.boxes.push(solid("cabinet", [x0 + 1.0, y0 + 0.5, 0.8], [0.7, 0.35, 0.8]));
        s.cameras.extend(room_views(x0, y0, x0 + size, y0 + size, 16, 1.4, 0.1 * r as f64));
    }
    s.cameras.truncate(keyframes.max(1));
    s
}
