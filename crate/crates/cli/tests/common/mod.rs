#![allow(dead_code)]

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_privfed"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn privfed")
}

pub fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

pub fn spawn(args: &[&str]) -> Child {
    bin().args(args).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().expect("spawn privfed")
}

/// Waits for `child`, killing it after `limit`.
pub fn finish(mut child: Child, limit: Duration) -> Output {
    let deadline = Instant::now() + limit;
    while child.try_wait().unwrap().is_none() {
        if Instant::now() > deadline {
            let _ = child.kill();
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.wait_with_output().unwrap()
}

pub struct Endpoints {
    pub alice: String,
    pub bob: String,
    pub dealer: String,
    pub analyst: String,
}

impl Endpoints {
    pub fn fresh() -> Self {
        Endpoints { alice: free_port(), bob: free_port(), dealer: free_port(), analyst: free_port() }
    }

    pub fn config(&self, body: &str) -> String {
        format!(
            "{body}\nalice={}\nbob={}\ndealer={}\nanalyst={}\n",
            self.alice, self.bob, self.dealer, self.analyst
        )
    }
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Output of every process in a deployment.
pub struct Deployment {
    pub results: Output,
    pub others: Vec<(String, Output)>,
}

impl Deployment {
    pub fn all_succeeded(&self) -> bool {
        self.results.status.success() && self.others.iter().all(|(_, o)| o.status.success())
    }

    pub fn report(&self) -> String {
        let mut out = format!("analyst: {}\n", String::from_utf8_lossy(&self.results.stderr));
        for (n, o) in &self.others {
            out.push_str(&format!("{n} ({}): {}\n", o.status, String::from_utf8_lossy(&o.stderr)));
        }
        out
    }
}

/// Generates `sites` site files into `dir`, shares them, runs dealer, both
/// compute parties, one partner process per site and the analyst over loopback.
pub fn deploy(dir: &Path, config_body: &str, sites: usize, patients: usize, seed: u64) -> Deployment {
    let data = dir.join("data");
    let gen = run(&[
        "gen", "--out", s(&data), "--sites", &sites.to_string(), "--patients", &patients.to_string(),
        "--seed", &seed.to_string(), "--overlap", "0.072",
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let ep = Endpoints::fresh();
    let config = write(dir, "study.conf", &ep.config(&format!("{config_body}\npartners={sites}")));
    let limit = Duration::from_secs(300);

    let mut prefixes = Vec::new();
    for i in 1..=sites {
        let prefix = dir.join(format!("site{i}"));
        let out = run(&[
            "share", "--input", s(&data.join(format!("site{i}.csv"))), "--config", s(&config),
            "--out-prefix", s(&prefix), "--seed", &i.to_string(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        prefixes.push(prefix);
    }

    let analyst = spawn(&["analyst", "--listen", &ep.analyst]);
    let dealer = spawn(&["dealer", "--listen", &ep.dealer, "--seed", "7"]);
    let bob = spawn(&["compute", "--role", "bob", "--config", s(&config), "--timeout", "240"]);
    let alice = spawn(&["compute", "--role", "alice", "--config", s(&config), "--timeout", "240"]);
    let partners: Vec<Child> = prefixes
        .iter()
        .enumerate()
        .map(|(i, p)| spawn(&["partner", "--input", s(p), "--id", &i.to_string(), "--config", s(&config)]))
        .collect();

    let mut others = Vec::new();
    for (i, p) in partners.into_iter().enumerate() {
        others.push((format!("partner {i}"), finish(p, limit)));
    }
    others.push(("alice".into(), finish(alice, limit)));
    others.push(("bob".into(), finish(bob, limit)));
    others.push(("dealer".into(), finish(dealer, limit)));
    let results = finish(analyst, limit);
    Deployment { results, others }
}
