mod common;

use std::fs;

use chartaudit_cli::Cli;
use clap::CommandFactory;
use common::*;

fn help(sub: Option<&str>) -> String {
    let mut args: Vec<&str> = sub.into_iter().collect();
    args.push("--help");
    let o = chartaudit(&args);
    assert_eq!(code(&o), 0);
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn help_snapshots() {
    let dir = fixtures().join("../snapshots");
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    let root = Cli::command();
    let mut names: Vec<Option<String>> = vec![None];
    names.extend(root.get_subcommands().map(|c| Some(c.get_name().to_string())));
    let mut stale = Vec::new();
    for name in names {
        let text = help(name.as_deref());
        let file = dir.join(format!("help-{}.txt", name.as_deref().unwrap_or("root")));
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&file, &text).unwrap();
        } else if fs::read_to_string(&file).ok().as_deref() != Some(text.as_str()) {
            stale.push(file.display().to_string());
        }
    }
    assert!(stale.is_empty(), "help output changed (rerun with UPDATE_SNAPSHOTS=1): {stale:?}");
}

#[test]
fn every_flag_is_documented() {
    for sub in Cli::command().get_subcommands() {
        let text = help(Some(sub.get_name()));
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            let flag = format!("--{long}");
            assert!(text.contains(&flag), "{} help lacks {flag}", sub.get_name());
            if long != "help" {
                assert!(arg.get_help().is_some(), "{} {flag} has no description", sub.get_name());
            }
        }
    }
}
