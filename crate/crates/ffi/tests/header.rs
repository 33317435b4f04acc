//! The generated header must compile as C and declare every entry point.

use std::path::Path;
use std::process::Command;

const ENTRY_POINTS: [&str; 11] = [
    "csdit_last_error_message",
    "csdit_count_flops",
    "csdit_mask_pair_counts",
    "csdit_model_new",
    "csdit_model_free",
    "csdit_model_output_features",
    "csdit_reference_pass",
    "csdit_cache_free",
    "csdit_predict_noise",
    "csdit_psnr",
    "csdit_ssim",
];

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/csdit.h")).unwrap();
    for name in ENTRY_POINTS {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct CsditModel CsditModel;"));
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "csdit.h"
int run(void) {
    CsditFlops f;
    CsditModel *m = 0;
    if (csdit_count_flops(2560, 640, 24, CSDIT_MODE_CAUSAL_SPARSE, 10, &f) != CSDIT_STATUS_OK) return 1;
    if (csdit_model_new(1, 16, 2, 0, CSDIT_PRECISION_F32, &m) != CSDIT_STATUS_OK) return 2;
    csdit_model_free(m);
    return f.total == 468582400ULL ? 0 : 3;
}
"#,
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-o"])
        .arg(dir.path().join("use.o"))
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    };
    assert!(status.success());
}
