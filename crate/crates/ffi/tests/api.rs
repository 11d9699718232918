use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::OnceLock;

use sdfocc::config::RunConfig;
use sdfocc::evaluation::{extract_occupancy, occ_metrics, OccGrid};
use sdfocc::field::{load_field, AnyField, FieldProvider};
use sdfocc::geometry::Vec3;
use sdfocc::renderer::{render_view, RenderModes};
use sdfocc::scenes::{Dataset, SceneConfig};
use sdfocc_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = sdfocc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Tiny dataset and a three-step fit, both produced through the C entry points.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scene = SceneConfig { width: 32, height: 24, frames: 6, ..Default::default() };
        let scene_path = dir.path().join("scene.toml");
        std::fs::write(&scene_path, toml::to_string(&scene).unwrap()).unwrap();
        let data = dir.path().join("data");
        assert_eq!(unsafe { sdfocc_synth(cstr(&scene_path).as_ptr(), cstr(&data).as_ptr()) }, SdfoccStatus::Ok);

        let mut cfg = RunConfig::desk();
        cfg.dataset = data.clone();
        cfg.output = dir.path().join("run");
        cfg.samples = 8;
        cfg.supervision.rays_per_step = 16;
        cfg.optim.epochs = 1;
        cfg.optim.steps_per_epoch = 3;
        cfg.regularizer.hessian_points = 16;
        cfg.regularizer.sparsity_points = 16;
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
        assert_eq!(unsafe { sdfocc_fit(cstr(&cfg_path).as_ptr(), false) }, SdfoccStatus::Ok);
        Fixture { run: dir.path().join("run"), data, _dir: dir }
    })
}

fn load(path: &Path) -> *mut SdfoccField {
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { sdfocc_field_load(cstr(path).as_ptr(), &mut f) }, SdfoccStatus::Ok);
    assert!(!f.is_null());
    f
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(sdfocc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn field_queries_match_the_rust_api() {
    let fx = fixture();
    let path = fx.run.join("field.socf");
    let f = load(&path);
    let native: AnyField<f64> = load_field(&path).unwrap();

    let mut res = [0u32; 3];
    assert_eq!(unsafe { sdfocc_field_resolution(f, res.as_mut_ptr()) }, SdfoccStatus::Ok);
    assert_eq!(res.map(|r| r as usize), native.spec().resolution);

    for p in [[0.0, 0.0, 0.0], [1.3, -2.1, -0.7], [-5.0, 4.0, 1.0]] {
        let mut s = f64::NAN;
        assert_eq!(unsafe { sdfocc_field_sdf(f, p[0], p[1], p[2], &mut s) }, SdfoccStatus::Ok);
        assert_eq!(s, native.sdf_value(Vec3::new(p[0], p[1], p[2])));
    }

    let n = native.spec().num_voxels();
    let mut labels = vec![9u8; n];
    assert_eq!(unsafe { sdfocc_field_occupancy(f, labels.as_mut_ptr(), n) }, SdfoccStatus::Ok);
    assert_eq!(labels, extract_occupancy(&native, native.spec()).labels);
    assert_eq!(unsafe { sdfocc_field_occupancy(f, labels.as_mut_ptr(), n - 1) }, SdfoccStatus::BufferSize);
    assert!(last_error().contains("needed"));

    unsafe { sdfocc_field_free(f) };
}

#[test]
fn depth_render_matches_the_rust_api() {
    let fx = fixture();
    let path = fx.run.join("field.socf");
    let f = load(&path);
    let native: AnyField<f64> = load_field(&path).unwrap();
    let cam = Dataset::load(&fx.data).unwrap().frames[1].camera;
    let k = cam.intrinsics;
    let c = SdfoccCamera {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width as u32,
        height: k.height as u32,
        rotation: std::array::from_fn(|i| cam.pose.rotation.0[i / 3][i % 3]),
        translation: cam.pose.translation.0,
    };
    let mut depth = vec![0f32; k.width * k.height];
    assert_eq!(unsafe { sdfocc_field_render_depth(f, &c, 8, depth.as_mut_ptr(), depth.len()) }, SdfoccStatus::Ok);
    let want = render_view(&native, &cam, 8, RenderModes::DEPTH).unwrap();
    assert_eq!(depth, want.depth.data);

    let bad = SdfoccCamera { rotation: [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], ..c };
    assert_eq!(unsafe { sdfocc_field_render_depth(f, &bad, 8, depth.as_mut_ptr(), depth.len()) }, SdfoccStatus::Domain);
    unsafe { sdfocc_field_free(f) };
}

#[test]
fn occupancy_metrics_match_the_rust_api() {
    let fx = fixture();
    let gt_path = fx.data.join("gt_occupancy.socg");
    let f = load(&fx.run.join("field.socf"));
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { sdfocc_occ_load(cstr(&gt_path).as_ptr(), &mut g) }, SdfoccStatus::Ok);

    let gt = OccGrid::load(&gt_path).unwrap();
    let mut n = 0usize;
    assert_eq!(unsafe { sdfocc_occ_len(g, &mut n) }, SdfoccStatus::Ok);
    assert_eq!(n, gt.labels.len());

    let native: AnyField<f64> = load_field(&fx.run.join("field.socf")).unwrap();
    for mask in [false, true] {
        let mut m = SdfoccOccMetrics::default();
        assert_eq!(unsafe { sdfocc_occ_metrics(f, g, mask, &mut m) }, SdfoccStatus::Ok);
        let want = occ_metrics(&extract_occupancy(&native, &gt.spec), &gt, mask).unwrap();
        assert_eq!((m.iou, m.precision, m.recall), (want.iou, want.precision, want.recall));
        assert_eq!((m.tp, m.fp, m.fn_), (want.tp as u64, want.fp as u64, want.fn_ as u64));
    }
    unsafe {
        sdfocc_occ_free(g);
        sdfocc_field_free(f);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = ptr::null_mut();
    let missing = cstr(&dir.path().join("nope.socf"));
    assert_eq!(unsafe { sdfocc_field_load(missing.as_ptr(), &mut f) }, SdfoccStatus::Io);
    assert!(f.is_null());
    assert!(last_error().contains("nope.socf"));

    let junk = dir.path().join("junk.socf");
    std::fs::write(&junk, b"not a field").unwrap();
    assert_eq!(unsafe { sdfocc_field_load(cstr(&junk).as_ptr(), &mut f) }, SdfoccStatus::Parse);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "optim.lr = 1.0\n").unwrap();
    assert_eq!(unsafe { sdfocc_fit(cstr(&cfg).as_ptr(), false) }, SdfoccStatus::Config);
    assert!(last_error().contains("lr"));

    assert_eq!(unsafe { sdfocc_field_load(ptr::null(), &mut f) }, SdfoccStatus::NullArgument);
    assert_eq!(unsafe { sdfocc_field_sdf(ptr::null(), 0.0, 0.0, 0.0, &mut 0.0) }, SdfoccStatus::NullArgument);
    let bytes = [0xffu8, 0xfe, 0];
    let bad = CStr::from_bytes_with_nul(&bytes).unwrap();
    assert_eq!(unsafe { sdfocc_synth(bad.as_ptr(), bad.as_ptr()) }, SdfoccStatus::InvalidString);
    unsafe {
        sdfocc_field_free(ptr::null_mut());
        sdfocc_occ_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sdfocc.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 12);
    for name in exported {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(h.contains("typedef struct SdfoccField SdfoccField;"));
}

/// Compiles tests/c/smoke.c against the header and static library when a C compiler is present.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libsdfocc_ffi.a");
    if !lib.is_file() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).arg(fixture().run.join("field.socf")).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    assert_eq!(&fields[1..4], ["32", "32", "32"]);
}
