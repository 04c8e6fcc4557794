//! Compiles and runs a C program against the generated header and the
//! static library. Skipped when no C compiler is on the path.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "limitclass.h"

int main(void) {
    const char *s[] = {"0", "1"};
    LcExpression *e = NULL;
    if (lc_expression_new(2, s, 2, NULL, 0, 0.0, &e) != LC_STATUS_OK) return 1;
    double re[4], im[4];
    if (lc_concomitant_matrix(e, 0.0, re, im, 4) != LC_STATUS_OK) return 2;
    if (re[1] != -1.0 || re[2] != 1.0 || re[0] != 0.0 || im[1] != 0.0) return 3;
    lc_expression_free(e);
    char *report = NULL;
    LcStatus st = lc_classify_config_json("{\"name\":\"P1\",\"order\":2,\"s\":[\"0\",\"1\"],\"x_max\":40}", &report);
    if (st != LC_STATUS_OK || report == NULL) return 4;
    if (strstr(report, "\"det_rank\": 0") == NULL) return 5;
    lc_string_free(report);
    const char *bad[] = {"0", "1+"};
    if (lc_expression_new(2, bad, 2, NULL, 0, 0.0, &e) != LC_STATUS_INVALID_INPUT) return 6;
    if (strlen(lc_last_error_message()) == 0) return 7;
    puts("ok");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let lib = target_dir().join("liblimitclass_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn header_declares_the_abi() {
    let h = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/limitclass.h")).unwrap();
    for name in [
        "lc_expression_new",
        "lc_expression_free",
        "lc_concomitant_matrix",
        "lc_bracket",
        "lc_classify_config_json",
        "lc_string_free",
        "lc_last_error_message",
        "typedef struct LcExpression LcExpression",
        "LC_STATUS_FLAGGED",
    ] {
        assert!(h.contains(name), "{name}");
    }
}
