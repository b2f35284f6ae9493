use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deformpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deformpose"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_succeeds_and_bad_usage_exits_one() {
    assert_eq!(code(&deformpose(&["--help"])), 0);
    assert_eq!(code(&deformpose(&["protocol", "--no-such-flag"])), 1);
    assert_eq!(code(&deformpose(&[])), 1);
    let d = tempfile::tempdir().unwrap();
    let mesh = d.path().join("tri.obj");
    fs::write(&mesh, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let out = p(&d.path().join("out.obj"));
    // neither --deformation nor --random
    assert_eq!(code(&deformpose(&["deform", "--mesh", &p(&mesh), "--out", &out])), 1);
    assert_eq!(code(&deformpose(&["deform", "--mesh", &out, "--out", &out, "--random"])), 2);
}

#[test]
fn missing_or_malformed_inputs_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let missing = p(&d.path().join("missing.json"));
    let out = p(&d.path().join("out"));
    let o = deformpose(&["eval", "--manifest", &missing, "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("metrics::"));

    let bad = d.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&deformpose(&["losses-check", "--fixture", &p(&bad)])), 2);
}

#[test]
fn protocol_reports_every_placement() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("protocol.json");
    assert_eq!(code(&deformpose(&["protocol", "--out", &p(&out)])), 0);
    let v = json(&out);
    assert_eq!(v["count"], 108);
    assert_eq!(v["placements"].as_array().unwrap().len(), 108);

    let o = deformpose(&["protocol", "--radii", "0.5", "--azimuth-count", "4", "--topdown-count", "0"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["count"], 12);
}

#[test]
fn config_file_overrides_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("protocol.toml");
    fs::write(&cfg, "azimuth_count = 2\nradii = [0.4]\n").unwrap();
    let o = deformpose(&["protocol", "--azimuth-count", "7", "--config", &p(&cfg)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // one radius, three lateral rings of two, plus three top-down views
    assert_eq!(v["count"], 9);

    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&deformpose(&["protocol", "--config", &p(&cfg)])), 2);
}

#[test]
fn losses_check_round_trips_and_flags_tampering() {
    let d = tempfile::tempdir().unwrap();
    let fx = d.path().join("fixture.json");
    assert_eq!(code(&deformpose(&["losses-check", "--make-fixture", &p(&fx), "--seed", "3"])), 0);
    let o = deformpose(&["losses-check", "--fixture", &p(&fx)]);
    assert_eq!(code(&o), 0);
    let got: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(got, json(&fx)["expected"]);

    let mut v = json(&fx);
    let t = v["expected"]["translation"].as_f64().unwrap();
    v["expected"]["translation"] = serde_json::json!(t + 1e-9);
    fs::write(&fx, serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(code(&deformpose(&["losses-check", "--fixture", &p(&fx)])), 3);
    assert_eq!(
        code(&deformpose(&["losses-check", "--fixture", &p(&fx), "--tolerance", "1e-6"])),
        0
    );
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let mesh = d.path().join("cube.obj");
    fs::write(
        &mesh,
        "v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nv 0 0 0.1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n",
    )
    .unwrap();
    let pose = [1.0, 0.0, 0.0, 0.1, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0];
    let manifest = serde_json::json!({
        "instances": [
            {"name": "a", "category": "tet", "pred_mesh": "cube.obj", "pred_pose": pose,
             "gt_mesh": "cube.obj", "gt_pose": pose},
        ]
    });
    let mpath = d.path().join("manifest.json");
    fs::write(&mpath, manifest.to_string()).unwrap();
    let out = d.path().join("eval");
    let o = deformpose(&["eval", "--manifest", &p(&mpath), "--out", &p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    for k in ["add", "adds", "chamfer"] {
        assert_eq!(m["average"][k], 0.0);
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().last().unwrap().starts_with("Average,1,0,0,0"));
    assert!(fs::read_to_string(out.join("table.txt")).unwrap().contains("ADD-S"));
}

#[test]
fn deform_render_and_short_annotate_run() {
    let d = tempfile::tempdir().unwrap();
    let scene = d.path().join("scene");
    assert_eq!(code(&deformpose(&["make-scene", "--out", &p(&scene), "--seed", "2"])), 0);
    let mesh = scene.join("mesh.obj");

    let warped = d.path().join("warped.ply");
    let def = d.path().join("def.json");
    let o = deformpose(&[
        "deform", "--mesh", &p(&mesh), "--out", &p(&warped), "--random", "--seed", "5",
        "--save-deformation", &p(&def), "--canonicalize",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&def)["offsets"].as_array().unwrap().len(), 24);
    let again = d.path().join("again.ply");
    assert_eq!(
        code(&deformpose(&[
            "deform", "--mesh", &p(&mesh), "--out", &p(&again), "--deformation", &p(&def),
            "--canonicalize",
        ])),
        0
    );
    assert_eq!(fs::read(&warped).unwrap(), fs::read(&again).unwrap());

    let pose = d.path().join("pose.json");
    fs::write(&pose, "[1,0,0,0, 0,1,0,0, 0,0,1,0.6, 0,0,0,1]").unwrap();
    let pgm = d.path().join("sil.pgm");
    let o = deformpose(&[
        "render-sil", "--mesh", &p(&mesh), "--pose", &p(&pose), "--out", &p(&pgm), "--binarize",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5"));
    assert!(bytes.contains(&255));

    // behind the camera
    fs::write(&pose, "[1,0,0,0, 0,1,0,0, 0,0,1,-0.6, 0,0,0,1]").unwrap();
    assert_eq!(
        code(&deformpose(&["render-sil", "--mesh", &p(&mesh), "--pose", &p(&pose), "--out", &p(&pgm)])),
        3
    );

    let out = d.path().join("annotate");
    let o = deformpose(&[
        "annotate", "--scene", &p(&scene.join("scene.json")), "--out", &p(&out),
        "--max-iterations", "2", "--no-refit",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("result.json"));
    assert!(r["final_total"].as_f64().unwrap() <= r["initial_total"].as_f64().unwrap());
    assert_eq!(r["refit_iterations"], 0);
    let log = fs::read_to_string(out.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert_eq!(json(&out.join("eval_manifest.json"))["instances"][0]["name"], "seed-2");
}
