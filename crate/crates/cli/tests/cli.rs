use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sen2sharp::baselines::sharpen_bicubic;
use sen2sharp::net::{encode_checkpoint, AblationFlags, Architecture, FusionModel};
use sen2sharp::raster::load_raster;
use tempfile::TempDir;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = Self { dir };
        ws.write_config("config.json", extra);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.path("out").join(name)
    }

    fn write_config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            r#"{{
  "io": {{"input_z": "{z}", "input_x": "{x}", "output": "{o}"}},
  "wald": {{"patch": 16, "stride": 8, "val_fraction": 0.2, "seed": 3}},
  "model": {{"channels": [4, 4], "kernel": 3, "flags": {{"use_z": true, "use_hpf": true}}}},
  "train": {{"epochs": 2, "batch": 4, "lr": 0.01, "momentum": 0.9}},
  "metrics": {{"q_window": 8, "ergas_ratio": 0.5}}{extra}
}}"#,
            z = self.path("z.msr").display(),
            x = self.path("x.msr").display(),
            o = self.path("out").display(),
            extra = extra
        );
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with(args, "config.json")
    }

    fn run_with(&self, args: &[&str], config: &str) -> Output {
        let cfg = self.path(config);
        Command::new(env!("CARGO_BIN_EXE_sen2sharp"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn prepared() -> Self {
        let ws = Self::new("");
        ws.ok(&["synth", "--size", "64"]);
        ws.ok(&["degrade"]);
        ws
    }
}

fn header_json(path: &Path) -> serde_json::Value {
    let bytes = fs::read(path).unwrap();
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    serde_json::from_slice(&bytes[8..8 + n]).unwrap()
}

fn write_zero_model(path: &Path) {
    let model = FusionModel::zeroed(
        AblationFlags::default(),
        Architecture {
            hidden: [4, 4],
            kernel: 3,
        },
    )
    .unwrap();
    fs::write(path, encode_checkpoint(&model, None).unwrap()).unwrap();
}

#[test]
fn degrade_halves_and_is_deterministic() {
    let ws = Workspace::prepared();
    let z = load_raster(ws.path("z.msr")).unwrap();
    let x = load_raster(ws.path("x.msr")).unwrap();
    let zd = load_raster(ws.out("z_down.msr")).unwrap();
    let xd = load_raster(ws.out("x_down.msr")).unwrap();
    assert_eq!((zd.width(), zd.height()), (z.width() / 2, z.height() / 2));
    assert_eq!((xd.width(), xd.height()), (x.width() / 2, x.height() / 2));
    assert_eq!(load_raster(ws.out("reference.msr")).unwrap(), x);

    let first: Vec<Vec<u8>> = ["z_down.msr", "x_down.msr", "reference.msr"]
        .iter()
        .map(|n| fs::read(ws.out(n)).unwrap())
        .collect();
    ws.ok(&["degrade"]);
    for (n, bytes) in ["z_down.msr", "x_down.msr", "reference.msr"].iter().zip(first) {
        assert_eq!(fs::read(ws.out(n)).unwrap(), bytes);
    }
}

#[test]
fn train_writes_artifacts_deterministically() {
    let ws = Workspace::prepared();
    let stdout = ws.ok(&["train"]);
    assert!(stdout.contains("final validation loss"));
    let ckpt = fs::read(ws.out("model.fmc")).unwrap();
    let history = fs::read_to_string(ws.out("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,seconds");
    assert_eq!(lines.len(), 3);

    ws.ok(&["train"]);
    assert_eq!(fs::read(ws.out("model.fmc")).unwrap(), ckpt);

    ws.ok(&["train", "--seed", "9"]);
    assert_ne!(fs::read(ws.out("model.fmc")).unwrap(), ckpt);
}

#[test]
fn without_z_checkpoint_records_six_channels() {
    let ws = Workspace::prepared();
    let cfg = fs::read_to_string(ws.path("config.json"))
        .unwrap()
        .replace(r#""use_z": true"#, r#""use_z": false"#);
    fs::write(ws.path("noz.json"), cfg).unwrap();
    let out = ws.run_with(&["train"], "noz.json");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = header_json(&ws.out("model.fmc"));
    assert_eq!(h["arch"][0]["in_ch"], 6);
    assert_eq!(h["bn"]["channels"], 6);
    assert_eq!(h["flags"]["use_z"], false);

    // the default config expects the guide bands and must refuse this model
    let out = ws.run(&["sharpen"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("flag mismatch"));
    assert!(!ws.out("fused.msr").exists());
}

#[test]
fn zero_model_sharpens_to_bicubic_with_preview() {
    let ws = Workspace::prepared();
    let ckpt = ws.path("zero.fmc");
    write_zero_model(&ckpt);
    let preview = ws.path("preview.png");
    ws.ok(&[
        "sharpen",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--preview",
        preview.to_str().unwrap(),
    ]);
    let fused = load_raster(ws.out("fused.msr")).unwrap();
    let x = load_raster(ws.path("x.msr")).unwrap();
    assert_eq!(fused, sharpen_bicubic(&x).unwrap());
    let img = image::open(&preview).unwrap();
    assert_eq!((img.width() as usize, img.height() as usize), (fused.width(), fused.height()));
}

#[test]
fn tiled_and_untiled_outputs_agree() {
    let ws = Workspace::prepared();
    ws.ok(&["train"]);
    ws.ok(&["sharpen", "--tile", "0"]);
    let whole = load_raster(ws.out("fused.msr")).unwrap();
    ws.ok(&["sharpen", "--tile", "24", "--overlap", "6"]);
    let tiled = load_raster(ws.out("fused.msr")).unwrap();
    for (a, b) in whole.bands().iter().zip(tiled.bands()) {
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-9);
        }
    }
    let out = ws.run(&["sharpen", "--tile", "24", "--overlap", "12"]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_identity_and_formats() {
    let ws = Workspace::prepared();
    let r = ws.out("reference.msr");
    let stdout = ws.ok(&["evaluate", r.to_str().unwrap(), r.to_str().unwrap()]);
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(json["q_mean"], 1.0);
    assert_eq!(json["ergas"], 0.0);
    assert_eq!(json["hcc_mean"], 1.0);

    let csv = fs::read_to_string(ws.out("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let mut header = String::from("method,q_mean,ergas,hcc_mean");
    for b in ["B05", "B06", "B07", "B8A", "B11", "B12"] {
        header.push_str(&format!(",q_{0},rmse_{0},hcc_{0}", b));
    }
    assert_eq!(lines[0], header);
    let file_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.out("report.json")).unwrap()).unwrap();
    assert_eq!(file_json, json);
}

#[test]
fn evaluate_csv_matches_json_on_bicubic() {
    let ws = Workspace::prepared();
    let ckpt = ws.path("zero.fmc");
    write_zero_model(&ckpt);
    ws.ok(&["sharpen", "--reduced", "--checkpoint", ckpt.to_str().unwrap()]);
    let f = ws.out("fused_reduced.msr");
    let r = ws.out("reference.msr");
    let stdout = ws.ok(&["evaluate", f.to_str().unwrap(), r.to_str().unwrap()]);
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(json["ergas"].as_f64().unwrap() > 0.0);

    let csv = fs::read_to_string(ws.out("report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "fused_reduced");
    for (name, cell) in header.iter().zip(&row).skip(1) {
        let v: f64 = cell.parse().unwrap();
        let expect = match *name {
            "q_mean" | "ergas" | "hcc_mean" => json[*name].as_f64().unwrap(),
            other => {
                let (metric, band) = other.split_once('_').unwrap();
                let entry = json["per_band"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .find(|b| b["band"] == band)
                    .unwrap();
                entry[metric].as_f64().unwrap()
            }
        };
        assert_eq!(v, expect, "{}", name);
    }
}

#[test]
fn compare_lists_every_method() {
    let ws = Workspace::prepared();
    ws.ok(&["train"]);
    let noz = ws.path("noz.fmc");
    let cfg = fs::read_to_string(ws.path("config.json"))
        .unwrap()
        .replace(r#""use_z": true"#, r#""use_z": false"#);
    fs::write(ws.path("noz.json"), cfg).unwrap();
    let out = ws.run_with(&["train", "--checkpoint", noz.to_str().unwrap()], "noz.json");
    assert!(out.status.success());

    ws.ok(&["compare"]);
    let csv = fs::read_to_string(ws.out("compare.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["PCA", "IHS", "HPF", "bicubic", "proposed"]);

    let main = ws.out("model.fmc");
    ws.ok(&[
        "compare",
        "--checkpoint",
        main.to_str().unwrap(),
        "--checkpoint",
        noz.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(ws.out("compare.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("proposed (without z),")));
    assert_eq!(csv.lines().count(), 7);
    let bicubic: Vec<&str> = csv.lines().find(|l| l.starts_with("bicubic,")).unwrap().split(',').collect();
    assert!(bicubic[2].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn failures_exit_nonzero_and_clean_up() {
    let ws = Workspace::prepared();
    // an unknown preview band fails after the fused raster was written
    ws.write_config("badpreview.json", "");
    let text = fs::read_to_string(ws.path("badpreview.json"))
        .unwrap()
        .replace(r#""output": "#, r#""preview_bands": ["B11", "B99", "B05"], "output": "#);
    fs::write(ws.path("badpreview.json"), text).unwrap();
    let ckpt = ws.path("zero.fmc");
    write_zero_model(&ckpt);
    let png = ws.path("p.png");
    let out = ws.run_with(
        &[
            "sharpen",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--preview",
            png.to_str().unwrap(),
        ],
        "badpreview.json",
    );
    assert!(!out.status.success());
    assert!(!ws.out("fused.msr").exists());
    assert!(!png.exists());

    ws.write_config("unknown.json", r#", "extra": {}"#);
    assert!(!ws.run_with(&["degrade"], "unknown.json").status.success());

    let out = Command::new(env!("CARGO_BIN_EXE_sen2sharp"))
        .args(["degrade", "--config"])
        .arg(ws.path("config.json"))
        .env("SEN2SHARP_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());

    let missing = Workspace::new("");
    let out = missing.run(&["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("degrade"));
}
