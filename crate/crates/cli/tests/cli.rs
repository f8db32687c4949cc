use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use emfi_core::campaign::{CampaignConfig, CampaignMode};
use emfi_core::persist::{HEATMAP_FILE, LOG_FILE, SUMMARY_FILE};
use emfi_core::{
    DiePoint, GridSpec, PayloadKind, PulseConfig, StagePosition, SupplyVoltages, TriggerPlan, Volts,
};

fn emfi(workspace: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_emfi"));
    cmd.env("EMFI_WORKSPACE", workspace)
        .env_remove("EMFI_BIND")
        .env("RUST_LOG", "warn");
    cmd
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn emfi");
    assert!(out.status.success(), "emfi failed: {}", describe(&out));
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn describe(out: &Output) -> String {
    format!(
        "{}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn write_config(dir: &Path, file: &str, cfg: &CampaignConfig) -> PathBuf {
    let path = dir.join(file);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn small_scan() -> CampaignConfig {
    let mut cfg = CampaignConfig::new(
        CampaignMode::Scan {
            grid: GridSpec {
                origin: StagePosition::new(5.0, 2.0, 12.1),
                width: 2.0,
                height: 1.0,
                pitch: 1.0,
                z: 12.1,
            },
            attempts_per_position: 4,
        },
        PayloadKind::counter_loop(),
        PulseConfig::large_tip_default(),
    );
    cfg.seed = 3;
    cfg.trigger = TriggerPlan::new(300, 20);
    cfg.supply = SupplyVoltages {
        v_soc: Volts(0.59),
        ..SupplyVoltages::nominal()
    };
    cfg
}

fn log_lines(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join(LOG_FILE))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn scan_writes_results_and_rerun_resumes_without_new_attempts() {
    let ws = tempfile::tempdir().unwrap();
    let cfg_path = write_config(ws.path(), "tiny-scan.json", &small_scan());

    let stdout = run_ok(emfi(ws.path()).arg("scan").arg(&cfg_path));
    assert!(stdout.contains("attempts: 24/24"), "{stdout}");
    assert!(stdout.contains("best position"), "{stdout}");

    let dir = ws.path().join("campaigns").join("tiny-scan");
    let first = log_lines(&dir);
    assert_eq!(first.len(), 24);
    let heatmap = std::fs::read_to_string(dir.join(HEATMAP_FILE)).unwrap();
    assert_eq!(heatmap.lines().count(), 1 + 6);
    assert!(dir.join(SUMMARY_FILE).is_file());

    let again = run_ok(emfi(ws.path()).arg("scan").arg(&cfg_path));
    assert!(again.contains("attempts: 24/24"), "{again}");
    assert_eq!(log_lines(&dir), first);
}

#[test]
fn export_reprints_the_summary() {
    let ws = tempfile::tempdir().unwrap();
    let cfg_path = write_config(ws.path(), "exp.json", &small_scan());
    run_ok(emfi(ws.path()).arg("scan").arg(&cfg_path));
    let dir = ws.path().join("campaigns").join("exp");
    std::fs::remove_file(dir.join(SUMMARY_FILE)).unwrap();

    let stdout = run_ok(emfi(ws.path()).arg("export").arg(&dir));
    let written = std::fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap();
    assert_eq!(stdout, written);
    assert!(stdout.starts_with("Delay/ΔDelay"), "{stdout}");
    assert!(stdout.contains("300/20"), "{stdout}");
}

#[test]
fn attack_reports_an_interval_and_sweep_reports_groups() {
    let ws = tempfile::tempdir().unwrap();
    let mut attack = small_scan();
    attack.mode = CampaignMode::Fixed {
        at: DiePoint::new(5.0, 2.0),
        z: 12.1,
        attempts: 10,
    };
    let path = write_config(ws.path(), "atk.json", &attack);
    let stdout = run_ok(emfi(ws.path()).arg("attack").arg(&path));
    assert!(stdout.contains("attempts: 10/10"), "{stdout}");
    assert!(stdout.contains("95% interval"), "{stdout}");

    let mut sweep = small_scan();
    sweep.payload = PayloadKind::ArkVerify;
    sweep.mode = CampaignMode::Sweep {
        at: DiePoint::new(5.0, 2.0),
        z: 12.1,
        lo: 100,
        hi: 102,
        step: 1,
        attempts_per_delay: 2,
        grouping_threshold: 3,
    };
    let path = write_config(ws.path(), "swp.json", &sweep);
    let stdout = run_ok(emfi(ws.path()).arg("sweep").arg(&path));
    assert!(stdout.contains("attempts: 6/6"), "{stdout}");
    assert!(stdout.contains("delay groups:"), "{stdout}");
}

#[test]
fn subcommand_must_match_the_config_mode() {
    let ws = tempfile::tempdir().unwrap();
    let path = write_config(ws.path(), "scan.json", &small_scan());
    let out = emfi(ws.path()).arg("attack").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scan campaign"), "{}", describe(&out));
    assert!(!ws.path().join("campaigns").join("scan").exists());
}

#[test]
fn bad_config_fails_cleanly() {
    let ws = tempfile::tempdir().unwrap();
    let path = ws.path().join("broken.json");
    std::fs::write(&path, "{\"mode\": 1").unwrap();
    let out = emfi(ws.path()).arg("scan").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.json"));
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn get(addr: &str, path: &str) -> std::io::Result<String> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")?;
    let mut reply = String::new();
    stream.read_to_string(&mut reply)?;
    Ok(reply)
}

#[test]
fn serve_listens_on_the_bind_from_the_environment() {
    let ws = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");
    let _child = Child(
        emfi(ws.path())
            .arg("serve")
            .env("EMFI_BIND", &addr)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );

    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        match get(&addr, "/status") {
            Ok(reply) => break reply,
            Err(e) if Instant::now() > deadline => panic!("server never came up: {e}"),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    };
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"simulated\":true"), "{reply}");
    assert!(ws.path().is_dir());
}
