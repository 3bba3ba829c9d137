use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pirsi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pirsi")
}

fn kv(out: &Output) -> BTreeMap<String, String> {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .take_while(|l| !l.is_empty())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pirsi-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gen_db(dir: &Path, k: usize, t: usize) -> String {
    let path = dir.join(format!("db-{k}-{t}.bin"));
    let p = path.to_str().unwrap().to_string();
    kv(&run(&[
        "gen-db",
        "--k",
        &k.to_string(),
        "--t",
        &t.to_string(),
        "--seed",
        "3",
        "--out",
        &p,
    ]));
    p
}

struct Daemon(Child, String);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(db: &str) -> Daemon {
    let mut child = bin()
        .args(["serve", "--db", db, "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening=")
        .expect("listening line")
        .to_string();
    Daemon(child, addr)
}

#[test]
fn bounds_output() {
    let v = kv(&run(&["bounds", "--k", "8", "--m", "2"]));
    assert_eq!(v["capacity_w"], "1/3");
    assert_eq!(v["capacity_ws"], "1/6");
    let v = kv(&run(&["bounds", "--k", "4", "--m", "1", "--n", "2"]));
    assert_eq!(v["multiserver_rate_lb"], "2/3");
}

#[test]
fn audit_output() {
    let v = kv(&run(&[
        "audit",
        "--scheme",
        "partition",
        "--k",
        "3",
        "--m",
        "1",
    ]));
    assert_eq!(v["max_deviation"], "0");
    let v = kv(&run(&[
        "audit",
        "--scheme",
        "partition",
        "--k",
        "4",
        "--m",
        "1",
        "--joint",
    ]));
    assert_eq!(v["private"], "false");
    let v = kv(&run(&[
        "audit", "--scheme", "mds", "--k", "5", "--m", "2", "--joint",
    ]));
    assert_eq!(v["max_deviation"], "0");
    let v = kv(&run(&[
        "audit",
        "--scheme",
        "mds",
        "--k",
        "4",
        "--m",
        "1",
        "--statistical",
        "--samples",
        "1000",
    ]));
    assert_eq!(v["max_tv"], "0.000000");
}

#[test]
fn fetch_in_process() {
    let dir = scratch("inproc");
    let db = gen_db(&dir, 8, 4);
    let v = kv(&run(&[
        "fetch",
        "--scheme",
        "partition",
        "--db",
        &db,
        "--w",
        "2",
        "--s",
        "4,6",
        "--seed",
        "1",
    ]));
    assert_eq!(v["downloaded_bits"], "12");
    assert_eq!(v["verified"], "true");
    let v = kv(&run(&[
        "fetch", "--scheme", "mds", "--db", &db, "--w", "3", "--s", "1",
    ]));
    assert_eq!(v["downloaded_bits"], "28");
    let v = kv(&run(&[
        "fetch",
        "--scheme",
        "partition",
        "--db",
        &db,
        "--sample",
        "--m",
        "3",
        "--seed",
        "5",
    ]));
    assert_eq!(v["downloaded_bits"], "8");
    assert_eq!(v["verified"], "true");
}

#[test]
fn fetch_over_tcp_with_config_and_rate_report() {
    let dir = scratch("tcp");
    let db = gen_db(&dir, 4, 4);
    let (a, b) = (serve(&db), serve(&db));
    let cfg = dir.join("session.txt");
    std::fs::write(
        &cfg,
        format!(
            "scheme=multiserver\nn=2\nk=4\nm=1\nt=4\nseed=7\nservers={},{}\n",
            a.1, b.1
        ),
    )
    .unwrap();
    let tr = dir.join("tr.json");
    let v = kv(&run(&[
        "fetch",
        "--config",
        cfg.to_str().unwrap(),
        "--db",
        &db,
        "--w",
        "3",
        "--s",
        "4",
        "--transcript",
        tr.to_str().unwrap(),
    ]));
    assert_eq!(v["downloaded_bits"], "6");
    assert_eq!(v["rate"], "2/3");
    assert_eq!(v["verified"], "true");
    let r = kv(&run(&["rate-report", tr.to_str().unwrap()]));
    assert_eq!(r["downloaded_bits"], "6");
    assert_eq!(r["rate"], "2/3");
}

#[test]
fn errors_are_one_line() {
    for args in [
        &["bounds", "--k", "3", "--m", "3"][..],
        &["bounds", "--k", "5", "--m", "1", "--n", "2"][..],
        &["rate-report", "/nonexistent/transcript.json"][..],
        &["audit", "--scheme", "multiserver", "--k", "5", "--m", "1"][..],
    ] {
        let out = run(args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
    let dir = scratch("err");
    let db = gen_db(&dir, 4, 4);
    let out = run(&[
        "fetch",
        "--scheme",
        "partition",
        "--db",
        &db,
        "--w",
        "1",
        "--servers",
        "127.0.0.1:1",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("connection"));
}
