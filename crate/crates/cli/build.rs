use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    println!("cargo:rerun-if-changed=../../.git/index");
    let describe = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let version = match describe {
        Some(d) => format!("v{}-g{}", env!("CARGO_PKG_VERSION"), d),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    };
    println!("cargo:rustc-env=POSENAV_VERSION={version}");
}
