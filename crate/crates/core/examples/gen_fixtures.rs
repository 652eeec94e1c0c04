//! Regenerates the checked-in mini suite under `tests/fixtures/mini`.
//!
//! Usage: `cargo run -p animetric-core --example gen_fixtures [OUT_DIR]`

use std::fs;
use std::path::{Path, PathBuf};

use animetric_core::artifacts::{layout, MaskSequence, TrackRole, TrackSet};
use animetric_core::tensor::save_tensor;
use serde_json::json;

const MASK_FRAMES: usize = 12;
const MASK_SIZE: usize = 48;
const TRACK_FRAMES: usize = 16;
const TRACK_SIZE: usize = 64;

fn write_json(path: &Path, v: &serde_json::Value) {
    let mut bytes = serde_json::to_vec_pretty(v).unwrap();
    bytes.push(b'\n');
    fs::write(path, bytes).unwrap();
}

/// Solid-color 8×8 PNG stills; the color encodes case and frame.
fn write_frames(dir: &Path, seed: u8) {
    let frames = dir.join(layout::FRAMES_DIR);
    fs::create_dir_all(&frames).unwrap();
    for i in 0..3u8 {
        let img = image::RgbImage::from_pixel(8, 8, image::Rgb([seed.wrapping_mul(40), i * 60, 128]));
        img.save(frames.join(format!("frame-{i:02}.png"))).unwrap();
    }
}

/// Filled ellipse with semi-axes `a(t)` (x) and `b(t)` (y) at the center.
fn ellipse_masks(dir: &Path, axes: impl Fn(usize) -> (f64, f64)) {
    let (h, w) = (MASK_SIZE, MASK_SIZE);
    let c = MASK_SIZE as f64 / 2.0;
    let mut data = Vec::with_capacity(MASK_FRAMES * h * w);
    for t in 0..MASK_FRAMES {
        let (a, b) = axes(t);
        for r in 0..h {
            for col in 0..w {
                let x = (col as f64 + 0.5 - c) / a;
                let y = (r as f64 + 0.5 - c) / b;
                data.push((x * x + y * y <= 1.0) as u8);
            }
        }
    }
    let masks = MaskSequence::new(MASK_FRAMES, h, w, data).unwrap();
    save_tensor(dir.join(layout::MASKS), &masks.to_tensor().unwrap().with_attr("frame_rate", 24.0)).unwrap();
}

/// Three points per image edge moved by `motion(p0, t)`.
fn edge_tracks(dir: &Path, motion: impl Fn([f32; 2], usize) -> [f32; 2]) {
    let s = TRACK_SIZE as f32;
    let mut roles = Vec::new();
    let mut starts = Vec::new();
    for (role, pts) in [
        (TrackRole::EdgeTop, [[16.0, 4.0], [32.0, 4.0], [48.0, 4.0]]),
        (TrackRole::EdgeBottom, [[16.0, s - 4.0], [32.0, s - 4.0], [48.0, s - 4.0]]),
        (TrackRole::EdgeLeft, [[4.0, 16.0], [4.0, 32.0], [4.0, 48.0]]),
        (TrackRole::EdgeRight, [[s - 4.0, 16.0], [s - 4.0, 32.0], [s - 4.0, 48.0]]),
    ] {
        for p in pts {
            roles.push(role);
            starts.push(p);
        }
    }
    let positions = (0..TRACK_FRAMES)
        .flat_map(|t| starts.iter().map(move |p| (*p, t)))
        .map(|(p, t)| motion(p, t))
        .collect();
    let tracks = TrackSet::new(TRACK_FRAMES, positions, roles, (TRACK_SIZE, TRACK_SIZE)).unwrap();
    tracks.save(dir.join(layout::TRACKS)).unwrap();
}

fn phase(t: usize) -> f64 {
    (2.0 * std::f64::consts::PI * t as f64 / MASK_FRAMES as f64).sin()
}

fn scale_about_center(p: [f32; 2], k: f32) -> [f32; 2] {
    let c = TRACK_SIZE as f32 / 2.0;
    [c + (p[0] - c) * k, c + (p[1] - c) * k]
}

fn model_artifacts(root: &Path, model_b: bool) {
    let amp = if model_b { 0.15 } else { 0.3 };
    for (i, case) in ["app-01", "app-02", "app-03"].iter().enumerate() {
        let dir = root.join(case);
        fs::create_dir_all(&dir).unwrap();
        write_frames(&dir, i as u8);
    }

    let ss: [(&str, Box<dyn Fn(usize) -> (f64, f64)>); 3] = [
        ("ss-01", Box::new(move |t| (14.0 * (1.0 + amp * phase(t)), 10.0))),
        ("ss-02", Box::new(move |t| {
            let k = 1.0 + amp * phase(t);
            (12.0 * k, 12.0 / k)
        })),
        ("ss-03", Box::new(|_| (11.0, 11.0))),
    ];
    for (i, (case, axes)) in ss.iter().enumerate() {
        let dir = root.join(case);
        fs::create_dir_all(&dir).unwrap();
        write_frames(&dir, 10 + i as u8);
        ellipse_masks(&dir, axes);
    }

    // Content moving right is a pan to the left; model-b pans the wrong way
    // and zooms out where zoom-in was prompted.
    let sign = if model_b { -1.0 } else { 1.0 };
    let cam: [(&str, Box<dyn Fn([f32; 2], usize) -> [f32; 2]>); 3] = [
        ("cam-01", Box::new(move |p, t| [p[0] + sign * 1.5 * t as f32, p[1]])),
        ("cam-02", Box::new(move |p, t| scale_about_center(p, 1.0 + sign * 0.02 * t as f32))),
        ("cam-03", Box::new(|p, t| [p[0] + 0.05 * (t % 2) as f32, p[1]])),
    ];
    for (case, motion) in &cam {
        let dir = root.join(case);
        fs::create_dir_all(&dir).unwrap();
        edge_tracks(&dir, motion);
    }
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini"));
    if out.exists() {
        fs::remove_dir_all(&out).unwrap();
    }
    fs::create_dir_all(out.join("banks")).unwrap();

    let app_case = |id: &str, prompt: &str| json!({ "case_id": id, "prompt": prompt, "source_image": format!("images/{id}.png") });
    write_json(
        &out.join("manifest.json"),
        &json!({
            "suite": "mini",
            "dimensions": [
                {
                    "dimension_id": "appearance",
                    "scorer": "qa",
                    "question_bank": "banks/appearance.json",
                    "cases": [
                        app_case("app-01", "Pip the fox waves at the camera."),
                        app_case("app-02", "Bolt the robot walks across the room."),
                        app_case("app-03", "Mossy the turtle spins around slowly."),
                    ]
                },
                {
                    "dimension_id": "squash_stretch",
                    "scorer": "squash",
                    "context": "Shapes squash on impact and stretch in fast motion while keeping their volume.",
                    "cases": [
                        { "case_id": "ss-01", "prompt": "A rubber ball bounces on the floor." },
                        { "case_id": "ss-02", "prompt": "A jelly cube wobbles after landing." },
                        { "case_id": "ss-03", "prompt": "A stone rests on the table." }
                    ]
                },
                {
                    "dimension_id": "camera_motion",
                    "scorer": "camera",
                    "cases": [
                        { "case_id": "cam-01", "prompt": "Camera pans left over a meadow.", "expected_label": "pan_left" },
                        { "case_id": "cam-02", "prompt": "Camera zooms in on a cottage.", "expected_label": "zoom_in" },
                        { "case_id": "cam-03", "prompt": "Static shot of a lighthouse.", "expected_label": "static" }
                    ]
                }
            ]
        }),
    );

    let q = |id: &str, text: &str| json!({ "id": id, "text": text });
    write_json(
        &out.join("banks/appearance.json"),
        &json!({
            "dimension_id": "appearance",
            "context": "The character keeps its canonical look in every frame.",
            "cases": [
                {
                    "case_id": "app-01",
                    "profile": "Pip is a small orange fox with a white-tipped tail and a green scarf.",
                    "questions": [
                        q("q1", "Is the fox's fur orange throughout the video?"),
                        q("q2", "Does the fox keep its white-tipped tail?"),
                        q("q3", "Is the green scarf visible in every frame?"),
                        q("q4", "Does the fox keep the same head shape?")
                    ]
                },
                {
                    "case_id": "app-02",
                    "profile": "Bolt is a boxy silver robot with one round blue eye.",
                    "questions": [
                        q("q1", "Does the robot keep its boxy silver body?"),
                        q("q2", "Does the robot have exactly one round blue eye?")
                    ]
                },
                {
                    "case_id": "app-03",
                    "profile": "Mossy is a turtle with a moss-covered shell.",
                    "questions": [
                        q("q1", "Is the turtle's shell covered in moss?"),
                        q("q2", "Does the turtle keep four legs?"),
                        q("q3", "Is the shell the same shape from every side?")
                    ]
                }
            ]
        }),
    );

    let yes = r#"{"answer": "yes"}"#;
    let no = r#"{"answer": "no"}"#;
    let rule = |case: &str, contains: &str, reply: &str| json!({ "case_id": case, "contains": contains, "reply": reply });
    write_json(
        &out.join("stub-gateway.json"),
        &json!({
            "rules": [
                rule("app-01", "green scarf", no),
                rule("app-02", "blue eye", "I cannot tell."),
                rule("app-03", "same shape", no),
                rule("ss-01", "rebound", yes),
                rule("ss-02", "rebound", yes),
                rule("ss-03", "rebound", no)
            ],
            "default": yes
        }),
    );

    model_artifacts(&out.join("artifacts/model-a"), false);
    model_artifacts(&out.join("artifacts/model-b"), true);
    println!("fixtures written to {}", out.display());
}
