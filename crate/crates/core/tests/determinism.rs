use std::process::Command;

fn run_with_threads(threads: &str, args: &[&str]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_paralab"))
        .args(args)
        .args(["--out", "out.dat"])
        .env("PARALAB_THREADS", threads)
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0), "{args:?}");
    std::fs::read(dir.path().join("out.dat")).unwrap()
}

#[test]
fn outputs_are_byte_identical_across_thread_counts_and_reruns() {
    let runs: [&[&str]; 4] = [
        &["identities", "--trials", "8", "--seed", "7"],
        &["commutator-scan", "--depths", "2,4", "--trials", "12", "--format", "csv"],
        &["theta-scan", "--depths", "3", "--trials", "12"],
        &["katz", "--dims", "1,2", "--depth", "3", "--format", "csv"],
    ];
    for args in runs {
        let one = run_with_threads("1", args);
        assert_eq!(one, run_with_threads("1", args), "{args:?} rerun");
        assert_eq!(one, run_with_threads("4", args), "{args:?} 4 threads");
        assert_eq!(one, run_with_threads("0", args), "{args:?} auto threads");
    }
}
